#include "fsnas/json_io.hpp"

#include <fstream>
#include <sstream>

#include "fsnas/error.hpp"

namespace fsnas {

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), ErrorCode::Io, "cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const std::exception& e) {
    raise(ErrorCode::Parse, path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  check(out.good(), ErrorCode::Io, "cannot write " + path);
  out << j.dump(2) << "\n";
  check(out.good(), ErrorCode::Io, "write failed for " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), ErrorCode::Io, "cannot write " + path);
  out << text;
  check(out.good(), ErrorCode::Io, "write failed for " + path);
}

namespace space {

Json space_to_json(const SearchSpace& space) {
  Json j;
  j["name"] = space.name;
  j["stem_channels"] = space.stem_channels;
  j["stem_stride"] = space.stem_stride;
  j["num_classes"] = space.num_classes;
  j["input_resolution"] = space.input_resolution;
  j["stages"] = Json::array();
  for (const auto& st : space.stages) {
    Json s;
    s["base_channels"] = st.base_channels;
    s["depth_choices"] = st.depth_choices;
    s["ratios"] = st.ratios;
    s["channel_multiple"] = st.channel_multiple;
    s["stride"] = st.stride;
    j["stages"].push_back(std::move(s));
  }
  return j;
}

SearchSpace space_from_json(const Json& j) {
  SearchSpace sp;
  try {
    sp.name = j.value("name", "unnamed");
    sp.stem_channels = j.at("stem_channels").get<int>();
    sp.stem_stride = j.value("stem_stride", 1);
    sp.num_classes = j.at("num_classes").get<int>();
    sp.input_resolution = j.at("input_resolution").get<int>();
    for (const auto& s : j.at("stages")) {
      StageSpec st;
      st.base_channels = s.at("base_channels").get<int>();
      st.depth_choices = s.at("depth_choices").get<std::vector<int>>();
      st.ratios = s.at("ratios").get<std::vector<double>>();
      st.channel_multiple = s.value("channel_multiple", 8);
      st.stride = s.value("stride", sp.stages.empty() ? 1 : 2);
      std::sort(st.depth_choices.begin(), st.depth_choices.end());
      std::sort(st.ratios.begin(), st.ratios.end());
      sp.stages.push_back(std::move(st));
    }
  } catch (const Json::exception& e) {
    raise(ErrorCode::Parse, std::string("search space json: ") + e.what());
  }
  sp.validate();
  return sp;
}

SearchSpace load_space_file(const std::string& path) {
  return space_from_json(read_json_file(path));
}

}  // namespace space
}  // namespace fsnas
