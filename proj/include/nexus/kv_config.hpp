#pragma once

#include <map>
#include <string>

namespace nexus {

// Flat "key = value" text; '#' starts a comment. Duplicate keys throw.
std::map<std::string, std::string> parse_kv(const std::string& text);
std::map<std::string, std::string> parse_kv_file(const std::string& path);

}  // namespace nexus
