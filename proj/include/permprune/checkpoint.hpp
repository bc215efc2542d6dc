#pragma once
// Checkpoint persistence: little-endian IEEE-754 doubles in a versioned
// binary blob plus a JSON sidecar manifest describing the layout and the
// resolved hard permutations. save -> load -> save is byte-identical;
// version or digest mismatches are rejected rather than migrated.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "permprune/config.hpp"
#include "permprune/trainer.hpp"

namespace permprune {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'P', 'P', 'C', 'K'};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

struct Reader {
  const std::string& data;
  std::size_t pos = 0;

  std::uint32_t u32() {
    require(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    require(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  void require(std::size_t n) {
    if (pos + n > data.size()) throw std::runtime_error("checkpoint: truncated binary data");
  }
};

}  // namespace detail

// Write-to-temp then rename, so partially written artifacts never appear
// under the final name.
inline void atomic_write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_digest = 0;
  NMPattern pattern{2, 4};
  std::size_t group_count = 4;
  CostParams params;
  std::vector<PermIndex> resolved_perms;  // one per site, from the exact solver

  static Checkpoint from_training(const ExperimentConfig& cfg, const CostParams& params,
                                  const std::vector<PermIndex>& perms) {
    Checkpoint ck;
    ck.config_digest = config_digest(cfg);
    ck.pattern = cfg.train.pattern;
    ck.group_count = cfg.train.group_count;
    ck.params = params;
    ck.resolved_perms = perms;
    return ck;
  }
};

inline std::string checkpoint_binary_bytes(const Checkpoint& ck) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  detail::put_u32(out, ck.version);
  detail::put_u64(out, ck.config_digest);
  std::uint64_t doubles = 0;
  for (const auto& site : ck.params.sites)
    for (const auto& c : site.cost) doubles += c.size();
  detail::put_u64(out, doubles);
  for (const auto& site : ck.params.sites)
    for (const auto& c : site.cost)
      for (std::size_t i = 0; i < c.size(); ++i) detail::put_f64(out, c.data()[i]);
  return out;
}

inline std::string checkpoint_manifest_bytes(const Checkpoint& ck) {
  nlohmann::json j;
  j["format_version"] = ck.version;
  j["config_digest"] = ck.config_digest;
  j["pattern"] = {{"n_keep", ck.pattern.n_keep}, {"m_group", ck.pattern.m_group}};
  j["group_count"] = ck.group_count;
  j["data_file"] = "checkpoint.bin";
  nlohmann::json sites = nlohmann::json::array();
  for (const auto& site : ck.params.sites) {
    sites.push_back({{"block", site.block},
                     {"attention", site.attention},
                     {"dim", site.dim},
                     {"group_size", site.group_size},
                     {"groups", site.cost.size()}});
  }
  j["sites"] = sites;
  nlohmann::json perms = nlohmann::json::array();
  for (const auto& p : ck.resolved_perms) perms.push_back(p.map);
  j["resolved_perms"] = perms;
  return j.dump(2) + "\n";
}

inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  atomic_write_file(dir / "checkpoint.bin", checkpoint_binary_bytes(ck));
  atomic_write_file(dir / "checkpoint.json", checkpoint_manifest_bytes(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const std::string manifest_text = read_file(dir / "checkpoint.json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(manifest_text);
  } catch (const std::exception& e) {
    throw std::runtime_error("checkpoint: bad manifest: " + std::string(e.what()));
  }

  Checkpoint ck;
  ck.version = j.at("format_version").get<std::uint32_t>();
  if (ck.version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: format version " + std::to_string(ck.version) +
                             " not supported (expected " + std::to_string(kCheckpointVersion) +
                             ")");
  ck.config_digest = j.at("config_digest").get<std::uint64_t>();
  ck.pattern.n_keep = j.at("pattern").at("n_keep").get<std::size_t>();
  ck.pattern.m_group = j.at("pattern").at("m_group").get<std::size_t>();
  ck.group_count = j.at("group_count").get<std::size_t>();
  for (const auto& s : j.at("sites")) {
    CostParams::Site site;
    site.block = s.at("block").get<std::size_t>();
    site.attention = s.at("attention").get<bool>();
    site.dim = s.at("dim").get<std::size_t>();
    site.group_size = s.at("group_size").get<std::size_t>();
    site.cost.assign(s.at("groups").get<std::size_t>(),
                     Matrix(site.group_size, site.group_size));
    ck.params.sites.push_back(std::move(site));
  }
  for (const auto& p : j.at("resolved_perms")) {
    PermIndex perm;
    perm.map = p.get<std::vector<std::size_t>>();
    perm.validate();
    ck.resolved_perms.push_back(std::move(perm));
  }

  const std::string blob = read_file(dir / j.at("data_file").get<std::string>());
  detail::Reader r{blob};
  r.require(4);
  if (blob.compare(0, 4, kCheckpointMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in binary file");
  r.pos = 4;
  if (r.u32() != ck.version)
    throw std::runtime_error("checkpoint: manifest/binary version mismatch");
  if (r.u64() != ck.config_digest)
    throw std::runtime_error("checkpoint: manifest/binary digest mismatch");
  std::uint64_t doubles = r.u64();
  for (auto& site : ck.params.sites)
    for (auto& c : site.cost)
      for (std::size_t i = 0; i < c.size(); ++i) {
        if (doubles == 0) throw std::runtime_error("checkpoint: binary data too short");
        c.data()[i] = r.f64();
        --doubles;
      }
  if (doubles != 0) throw std::runtime_error("checkpoint: binary data too long");
  return ck;
}

// Shape compatibility against the model the config describes.
inline void check_checkpoint_against(const Checkpoint& ck, const ExperimentConfig& cfg) {
  if (ck.config_digest != config_digest(cfg))
    throw std::runtime_error("checkpoint: config digest mismatch (checkpoint was produced "
                             "with different model/task/pattern settings)");
  const CostParams expected = CostParams::zeros_for(planted_model(cfg.task),
                                                    cfg.train.group_count);
  if (ck.params.sites.size() != expected.sites.size())
    throw std::runtime_error("checkpoint: site count mismatch");
  for (std::size_t s = 0; s < expected.sites.size(); ++s) {
    if (ck.params.sites[s].dim != expected.sites[s].dim ||
        ck.params.sites[s].group_size != expected.sites[s].group_size ||
        ck.params.sites[s].cost.size() != expected.sites[s].cost.size())
      throw std::runtime_error("checkpoint: shape mismatch at site " + std::to_string(s));
  }
}

}  // namespace permprune
