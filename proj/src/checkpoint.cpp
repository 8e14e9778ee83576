#include "grt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace grt {

namespace {

void write_u64_le(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

std::uint64_t read_u64_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

void write_doubles_le(std::ostream& out, const std::vector<double>& values) {
  for (double d : values) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(d);
    write_u64_le(out, bits);
  }
}

nlohmann::json read_header(std::istream& in, const std::string& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw std::runtime_error("checkpoint error: bad magic in " + path);
  }
  const std::uint64_t header_len = read_u64_le(in);
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("checkpoint error: truncated header in " + path);
  return nlohmann::json::parse(header);
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const std::map<std::string, std::string>& meta) {
  nlohmann::ordered_json header;
  header["params"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& p : store.all()) {
    nlohmann::ordered_json entry;
    entry["name"] = p->name;
    entry["shape"] = p->shape;
    entry["offset"] = offset;
    header["params"].push_back(std::move(entry));
    offset += p->size();
  }
  header["meta"] = meta;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint error: cannot write " + path);
  out.write(kCheckpointMagic, 8);
  const std::string header_str = header.dump();
  write_u64_le(out, header_str.size());
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& p : store.all()) write_doubles_le(out, p->values);
}

std::map<std::string, std::string> checkpoint_meta(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint error: cannot open " + path);
  nlohmann::json header = read_header(in, path);
  std::map<std::string, std::string> meta;
  for (const auto& [key, value] : header.at("meta").items()) {
    meta[key] = value.get<std::string>();
  }
  return meta;
}

void load_checkpoint(const std::string& path, ParameterStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint error: cannot open " + path);
  nlohmann::json header = read_header(in, path);
  const std::streampos payload_start = in.tellg();

  std::size_t loaded = 0;
  for (const auto& entry : header.at("params")) {
    const std::string name = entry.at("name").get<std::string>();
    Parameter* p = store.find(name);
    if (p == nullptr) {
      throw std::runtime_error("checkpoint error: unexpected parameter " +
                               name + " in " + path);
    }
    const Shape shape = entry.at("shape").get<Shape>();
    if (shape != p->shape) {
      throw std::runtime_error(
          "checkpoint error: shape mismatch for " + name + ": file has " +
          shape_to_string(shape) + ", model has " + shape_to_string(p->shape));
    }
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    in.seekg(payload_start + static_cast<std::streamoff>(offset * 8));
    for (double& v : p->values) {
      v = std::bit_cast<double>(read_u64_le(in));
    }
    if (!in) {
      throw std::runtime_error("checkpoint error: truncated payload in " + path);
    }
    ++loaded;
  }
  if (loaded != store.all().size()) {
    throw std::runtime_error("checkpoint error: " + path + " holds " +
                             std::to_string(loaded) + " parameters, model has " +
                             std::to_string(store.all().size()));
  }
}

}  // namespace grt
