#include "fsnas/checkpoint.hpp"

#include <bit>
#include <fstream>

#include "fsnas/error.hpp"
#include "fsnas/hash.hpp"
#include "fsnas/json_io.hpp"
#include "fsnas/split_plan.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; add byte swapping first");

namespace fsnas::net {

void save_checkpoint(const std::string& prefix, SuperNet& net) {
  Json manifest;
  manifest["format_version"] = 1;
  manifest["space"] = space::space_to_json(net.space);
  manifest["plan"] = split::plan_to_json(net.plan);
  manifest["dropout_p"] = net.dropout_p;

  Json tensors = Json::array();
  std::ofstream blob(prefix + ".bin", std::ios::binary);
  check(blob.good(), ErrorCode::Io, "cannot write " + prefix + ".bin");
  std::int64_t offset = 0;
  visit_tensors(net, [&](const TensorView& v) {
    const std::int64_t numel = shape_numel(v.shape);
    tensors.push_back({{"name", v.name},
                       {"shape", v.shape},
                       {"offset", offset},
                       {"numel", numel}});
    blob.write(reinterpret_cast<const char*>(v.data),
               static_cast<std::streamsize>(numel * 4));
    offset += numel * 4;
  });
  check(blob.good(), ErrorCode::Io, "write failed for " + prefix + ".bin");
  blob.close();
  manifest["tensors"] = std::move(tensors);
  manifest["blob_bytes"] = offset;
  write_json_file(prefix + ".json", manifest);
}

SuperNet load_checkpoint(const std::string& prefix) {
  const Json manifest = read_json_file(prefix + ".json");
  check(manifest.value("format_version", 0) == 1, ErrorCode::Format,
        prefix + ".json: unsupported checkpoint version");
  const auto sp = space::space_from_json(manifest.at("space"));
  const auto plan = split::plan_from_json(manifest.at("plan"));
  SuperNet net = build_supernet(sp, plan, 0);
  net.dropout_p = manifest.value("dropout_p", 0.2f);

  std::ifstream blob(prefix + ".bin", std::ios::binary);
  check(blob.good(), ErrorCode::Io, "cannot open " + prefix + ".bin");

  const auto& tensors = manifest.at("tensors");
  std::size_t cursor = 0;
  visit_tensors(net, [&](const TensorView& v) {
    check(cursor < tensors.size(), ErrorCode::Format,
          prefix + ": manifest lists fewer tensors than the net contains");
    const auto& entry = tensors.at(cursor++);
    check(entry.at("name").get<std::string>() == v.name, ErrorCode::Format,
          prefix + ": tensor order mismatch at " + v.name);
    check(entry.at("shape").get<std::vector<int>>() == v.shape,
          ErrorCode::Format, prefix + ": shape mismatch for " + v.name);
    const std::int64_t numel = shape_numel(v.shape);
    blob.seekg(entry.at("offset").get<std::int64_t>());
    blob.read(reinterpret_cast<char*>(v.data),
              static_cast<std::streamsize>(numel * 4));
    check(blob.good(), ErrorCode::Format,
          prefix + ".bin: truncated while reading " + v.name);
  });
  check(cursor == tensors.size(), ErrorCode::Format,
        prefix + ": manifest lists more tensors than the net contains");
  return net;
}

std::uint64_t checkpoint_content_hash(const std::string& prefix) {
  ContentHasher h;
  h.update(read_text_file(prefix + ".json"));
  h.update(read_text_file(prefix + ".bin"));
  return h.digest();
}

}  // namespace fsnas::net
