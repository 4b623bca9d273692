#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "mhqa/embedded_resources.hpp"
#include "mhqa/util.hpp"

namespace mhqa {

/// Named prompt templates with `{{placeholder}}` slots. Defaults come from
/// the templates/ directory compiled into the library; a directory of
/// `<name>.txt` files may override any of them.
class TemplateSet {
 public:
  static TemplateSet builtin() {
    TemplateSet t;
    t.version_ = std::string(embedded::kTemplateVersion);
    for (const auto& [name, text] : embedded::kTemplates) t.templates_[std::string(name)] = strip_final_newline(text);
    return t;
  }

  static TemplateSet from_directory(const std::filesystem::path& dir) {
    auto t = builtin();
    if (std::ifstream v(dir / "VERSION"); v) {
      std::string version;
      std::getline(v, version);
      t.version_ = std::string(util::trim(version));
    }
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() != ".txt") continue;
      std::ifstream in(entry.path(), std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      t.templates_[entry.path().stem().string()] = strip_final_newline(ss.str());
    }
    return t;
  }

  const std::string& version() const { return version_; }

  const std::string& get(std::string_view name) const {
    auto it = templates_.find(std::string(name));
    if (it == templates_.end()) throw ConfigError("unknown prompt template '" + std::string(name) + "'");
    return it->second;
  }

  bool contains(std::string_view name) const { return templates_.count(std::string(name)) != 0; }

  /// Substitutes every `{{key}}`. A placeholder without a value is an error.
  std::string render(std::string_view name, const std::map<std::string, std::string>& vars) const {
    return render_text(get(name), vars, name);
  }

  static std::string render_text(std::string_view tpl, const std::map<std::string, std::string>& vars,
                                 std::string_view name = "inline") {
    std::string out;
    out.reserve(tpl.size() + 256);
    std::size_t pos = 0;
    while (pos < tpl.size()) {
      auto open = tpl.find("{{", pos);
      if (open == std::string_view::npos) {
        out.append(tpl.substr(pos));
        break;
      }
      auto close = tpl.find("}}", open + 2);
      if (close == std::string_view::npos) throw ConfigError("unterminated placeholder in template '" + std::string(name) + "'");
      out.append(tpl.substr(pos, open - pos));
      auto key = std::string(tpl.substr(open + 2, close - open - 2));
      auto it = vars.find(key);
      if (it == vars.end())
        throw ConfigError("template '" + std::string(name) + "' needs a value for '" + key + "'");
      out.append(it->second);
      pos = close + 2;
    }
    return out;
  }

 private:
  static std::string strip_final_newline(std::string_view s) {
    if (!s.empty() && s.back() == '\n') s.remove_suffix(1);
    if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
    return std::string(s);
  }

  std::string version_;
  std::map<std::string, std::string> templates_;
};

}  // namespace mhqa
