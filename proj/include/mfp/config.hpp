#pragma once

#include <functional>
#include <string>

namespace mfp {

// Value parsers for key=value settings. Throw ConfigError naming the key.
bool parse_bool(const std::string& key, const std::string& value);
long long parse_int(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);

// Calls `apply(key, value)` for every non-blank line. '#' starts a comment;
// whitespace around keys and values is ignored.
void for_each_setting(const std::string& text, const std::function<void(const std::string&, const std::string&)>& apply);

// Splits "key=value"; ConfigError when '=' is missing.
std::pair<std::string, std::string> split_setting(const std::string& text);

}  // namespace mfp
