#include "canonpose/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace canonpose {
namespace {

constexpr char kMagic[8] = {'C', 'N', 'P', 'S', 'C', 'K', 'P', 'T'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(char((v >> (8 * b)) & 0xffu));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= std::uint64_t(p[b]) << (8 * b);
  return v;
}

}  // namespace

template <typename Scalar>
void save_checkpoint(const std::string& path, const ModelParams<Scalar>& params) {
  nlohmann::ordered_json header;
  header["format_version"] = kCheckpointVersion;
  header["joints"] = params.joints;
  header["hidden"] = params.hidden;
  header["seed"] = params.seed;
  header["tensors"] = nlohmann::ordered_json::array();
  std::string payload;
  visit_tensors([&](const std::string& name, const ad::Matrix<Scalar>& t) {
    header["tensors"].push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}});
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        put_u64(payload, std::bit_cast<std::uint64_t>(double(t(r, c))));
      }
    }
  }, params.net);

  const std::string text = header.dump();
  std::string blob(kMagic, kMagic + 8);
  put_u64(blob, text.size());
  blob += text;
  blob += payload;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(blob.data(), std::streamsize(blob.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

template <typename Scalar>
ModelParams<Scalar> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, 8) != 0) {
    throw ParseError(path + ": not a checkpoint file");
  }
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  const std::uint64_t header_len = get_u64(bytes + 8);
  if (16 + header_len > blob.size()) throw ParseError(path + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad header: " + e.what());
  }
  if (header.value("format_version", -1) != kCheckpointVersion) {
    throw ParseError(path + ": unsupported format version");
  }

  const int joints = header.at("joints").get<int>();
  const auto hidden = header.at("hidden").get<Eigen::Index>();
  ModelParams<Scalar> params = zero_params<Scalar>(joints, hidden);
  params.seed = header.at("seed").get<std::uint64_t>();

  const auto& tensors = header.at("tensors");
  std::size_t index = 0;
  std::size_t offset = 16 + header_len;
  visit_tensors([&](const std::string& name, ad::Matrix<Scalar>& t) {
    if (index >= tensors.size() || tensors[index].at("name").get<std::string>() != name) {
      throw ParseError(path + ": unexpected tensor order at " + name);
    }
    const auto shape = tensors[index].at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols()) {
      throw ParseError(path + ": shape mismatch for " + name);
    }
    const std::size_t need = std::size_t(t.size()) * 8;
    if (offset + need > blob.size()) throw ParseError(path + ": truncated payload at " + name);
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        t(r, c) = Scalar(std::bit_cast<double>(get_u64(bytes + offset)));
        offset += 8;
      }
    }
    ++index;
  }, params.net);
  if (offset != blob.size()) throw ParseError(path + ": trailing bytes");
  return params;
}

template void save_checkpoint<float>(const std::string&, const ModelParams<float>&);
template void save_checkpoint<double>(const std::string&, const ModelParams<double>&);
template ModelParams<float> load_checkpoint<float>(const std::string&);
template ModelParams<double> load_checkpoint<double>(const std::string&);

}  // namespace canonpose
