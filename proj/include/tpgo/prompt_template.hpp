#pragma once

#include <cctype>
#include <map>
#include <string>
#include <string_view>

#include "tpgo/common.hpp"
#include "tpgo/prompt_templates.hpp"

namespace tpgo {

using TemplateVars = std::map<std::string, std::string>;

// Replaces {name} with vars[name] (missing -> Error) and {name?} with vars[name]
// or nothing. Braces around anything other than [a-z_]+ are left alone, so JSON
// examples in templates pass through untouched.
inline std::string render_template(std::string_view tpl, const TemplateVars& vars) {
    std::string out;
    out.reserve(tpl.size());
    std::size_t i = 0;
    while (i < tpl.size()) {
        if (tpl[i] == '{') {
            std::size_t j = i + 1;
            while (j < tpl.size() && (std::islower(static_cast<unsigned char>(tpl[j])) || tpl[j] == '_')) ++j;
            bool optional = j < tpl.size() && tpl[j] == '?';
            std::size_t close = optional ? j + 1 : j;
            if (j > i + 1 && close < tpl.size() && tpl[close] == '}') {
                std::string name(tpl.substr(i + 1, j - i - 1));
                auto it = vars.find(name);
                if (it != vars.end()) out += it->second;
                else if (!optional) throw Error("template placeholder {" + name + "} has no value");
                i = close + 1;
                continue;
            }
        }
        out += tpl[i++];
    }
    return out;
}

}  // namespace tpgo
