#include "drcvr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace drcvr {

namespace {

void put_u64_le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

uint64_t get_u64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(p[i]) << (8 * i);
  return v;
}

}  // namespace

const CheckpointBlock* Checkpoint::find(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.name == name) return &b;
  return nullptr;
}

CheckpointBlock& Checkpoint::add(const std::string& name, std::vector<double> values) {
  blocks.push_back(CheckpointBlock{name, std::move(values)});
  return blocks.back();
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  nlohmann::json header;
  header["format"] = "drcvr-checkpoint";
  header["version"] = 1;
  header["seed"] = ck.seed;
  header["hyper"] = ck.hyper;
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : ck.blocks)
    blocks.push_back({{"name", b.name}, {"size", b.values.size()}});
  header["blocks"] = blocks;
  std::string hdr = header.dump();

  std::string out;
  put_u64_le(out, hdr.size());
  out += hdr;
  for (const auto& b : ck.blocks) {
    for (double d : b.values) {
      uint64_t bits = std::bit_cast<uint64_t>(d);
      put_u64_le(out, bits);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open: " + path);
  std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (raw.size() < 8) throw std::runtime_error("checkpoint: truncated header length: " + path);
  const unsigned char* p = reinterpret_cast<const unsigned char*>(raw.data());
  uint64_t hlen = get_u64_le(p);
  if (8 + hlen > raw.size()) throw std::runtime_error("checkpoint: truncated header: " + path);
  nlohmann::json header = nlohmann::json::parse(raw.substr(8, hlen));
  if (header.value("format", "") != "drcvr-checkpoint")
    throw std::runtime_error("checkpoint: bad format tag in " + path);

  Checkpoint ck;
  ck.seed = header.value("seed", uint64_t(0));
  ck.hyper = header.value("hyper", nlohmann::json::object());
  size_t off = 8 + hlen;
  for (const auto& jb : header.at("blocks")) {
    CheckpointBlock b;
    b.name = jb.at("name").get<std::string>();
    size_t n = jb.at("size").get<size_t>();
    if (off + n * 8 > raw.size()) throw std::runtime_error("checkpoint: truncated blob: " + path);
    b.values.resize(n);
    for (size_t i = 0; i < n; ++i) {
      uint64_t bits = get_u64_le(reinterpret_cast<const unsigned char*>(raw.data() + off + i * 8));
      b.values[i] = std::bit_cast<double>(bits);
    }
    off += n * 8;
    ck.blocks.push_back(std::move(b));
  }
  if (off != raw.size()) throw std::runtime_error("checkpoint: trailing bytes in " + path);
  return ck;
}

}  // namespace drcvr
