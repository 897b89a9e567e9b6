#include "ccil/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "ccil/nets.hpp"

namespace ccil {

namespace {

constexpr char kMagic[8] = {'C', 'C', 'I', 'L', 'C', 'K', 'P', '1'};

Json meta_to_json(const CheckpointMeta& meta) {
  return Json{{"arch", meta.extractor.arch},
              {"input_dim", meta.extractor.input_dim},
              {"hidden", meta.extractor.hidden},
              {"feature_dim", meta.extractor.feature_dim},
              {"image", {meta.extractor.image.channels, meta.extractor.image.height,
                         meta.extractor.image.width}},
              {"head", head_mode_to_string(meta.head_mode)},
              {"head_scale", meta.head_scale},
              {"num_classes", meta.num_classes},
              {"old_count", meta.old_count},
              {"config_fingerprint", meta.config_fingerprint}};
}

CheckpointMeta meta_from_json(const Json& j) {
  CheckpointMeta meta;
  meta.extractor.arch = j.at("arch").get<std::string>();
  meta.extractor.input_dim = j.at("input_dim").get<Index>();
  meta.extractor.hidden = j.at("hidden").get<std::vector<Index>>();
  meta.extractor.feature_dim = j.at("feature_dim").get<Index>();
  auto img = j.at("image").get<std::vector<int>>();
  meta.extractor.image = {img.at(0), img.at(1), img.at(2)};
  meta.head_mode = head_mode_from_string(j.at("head").get<std::string>());
  meta.head_scale = j.at("head_scale").get<double>();
  meta.num_classes = j.at("num_classes").get<Index>();
  meta.old_count = j.at("old_count").get<Index>();
  meta.config_fingerprint = j.at("config_fingerprint").get<std::uint64_t>();
  return meta;
}

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, IncrementalClassifier<Scalar>& model,
                     const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic));

  std::vector<std::pair<std::string, MatX*>> blobs;
  model.collect_blobs(blobs);

  Json header = meta_to_json(meta);
  Json dir = Json::array();
  for (auto& [name, mat] : blobs) {
    dir.push_back({{"name", name}, {"rows", mat->rows()}, {"cols", mat->cols()}});
  }
  header["blobs"] = dir;
  std::string header_str = header.dump();
  write_u64(out, header_str.size());
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));

  for (auto& [name, mat] : blobs) {
    out.write(reinterpret_cast<const char*>(mat->data()),
              static_cast<std::streamsize>(sizeof(Scalar) * static_cast<std::size_t>(mat->size())));
  }
  if (!out) throw std::runtime_error("short write on checkpoint " + path);
}

IncrementalClassifier<Scalar> load_checkpoint(const std::string& path, CheckpointMeta* meta_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path + ": not a checkpoint file");
  }
  std::uint64_t header_len = read_u64(in);
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error(path + ": truncated header");
  Json header = Json::parse(header_str);
  CheckpointMeta meta = meta_from_json(header);

  // Parameters are overwritten below; the init stream is irrelevant.
  Rng dummy(0);
  auto extractor = make_extractor<Scalar>(meta.extractor, dummy);
  IncrementalClassifier<Scalar> model(std::move(extractor), meta.head_mode,
                                      static_cast<Scalar>(meta.head_scale));
  if (meta.num_classes > 0) model.expand_head(meta.num_classes, dummy);
  model.set_old_count(meta.old_count);

  std::vector<std::pair<std::string, MatX*>> blobs;
  model.collect_blobs(blobs);
  const Json& dir = header.at("blobs");
  if (dir.size() != blobs.size()) {
    throw std::runtime_error(path + ": blob directory does not match the architecture");
  }
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    const Json& entry = dir.at(i);
    if (entry.at("name").get<std::string>() != blobs[i].first) {
      throw std::runtime_error(path + ": blob order mismatch at '" + blobs[i].first + "'");
    }
    Index rows = entry.at("rows").get<Index>();
    Index cols = entry.at("cols").get<Index>();
    blobs[i].second->resize(rows, cols);
    in.read(reinterpret_cast<char*>(blobs[i].second->data()),
            static_cast<std::streamsize>(sizeof(Scalar) *
                                         static_cast<std::size_t>(rows * cols)));
  }
  if (!in) throw std::runtime_error(path + ": truncated blob data");
  if (meta_out) *meta_out = meta;
  return model;
}

}  // namespace ccil
