#pragma once

#include <json.hpp>
#include <string>

#include "fsnas/search_space.hpp"

namespace fsnas {

using Json = nlohmann::ordered_json;

namespace space {

Json space_to_json(const SearchSpace& space);
SearchSpace space_from_json(const Json& j);
SearchSpace load_space_file(const std::string& path);

}  // namespace space

Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace fsnas
