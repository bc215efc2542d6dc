#pragma once
// Flat key=value experiment configuration. Lines hold one `key = value`
// pair; `#` starts a comment. Every key has a default; unknown and
// duplicate keys are rejected with a line-numbered diagnostic. Parsing is
// total: any byte stream yields either a validated config or an error
// string, never a crash.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include "permprune/toymodel.hpp"
#include "permprune/trainer.hpp"

namespace permprune {

enum class ReportFormat { Json, Csv };

struct ExperimentConfig {
  TrainConfig train;
  SynthTask task;
  std::string out_dir;  // required for commands that write artifacts
  ReportFormat report_format = ReportFormat::Json;

  void validate() const {
    train.validate();
    task.validate();
    if (task.d_hidden % train.group_count != 0 || task.d_ff % train.group_count != 0)
      throw std::invalid_argument("group_count " + std::to_string(train.group_count) +
                                  " must divide d_hidden and d_ff");
    if (task.d_hidden % train.pattern.m_group != 0 || task.d_ff % train.pattern.m_group != 0)
      throw std::invalid_argument("pattern_m " + std::to_string(train.pattern.m_group) +
                                  " must divide d_hidden and d_ff");
  }
};

struct ConfigParseResult {
  std::optional<ExperimentConfig> config;
  std::string error;  // empty on success

  bool ok() const { return config.has_value(); }
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline bool parse_double(const std::string& v, double& out) {
  try {
    std::size_t pos = 0;
    out = std::stod(v, &pos);
    return pos == v.size() && std::isfinite(out);
  } catch (...) {
    return false;
  }
}

inline bool parse_count(const std::string& v, std::size_t& out) {
  if (v.empty() || v[0] == '-') return false;
  try {
    std::size_t pos = 0;
    out = std::stoull(v, &pos);
    return pos == v.size();
  } catch (...) {
    return false;
  }
}

inline bool parse_bool(const std::string& v, bool& out) {
  if (v == "true" || v == "1" || v == "yes") {
    out = true;
    return true;
  }
  if (v == "false" || v == "0" || v == "no") {
    out = false;
    return true;
  }
  return false;
}

}  // namespace detail

// All recognized keys with their parse actions. Defaults are whatever the
// underlying structs carry; see README for the documented table.
inline ConfigParseResult parse_config_text(std::string_view text) {
  ExperimentConfig cfg;
  using Setter = std::function<bool(const std::string&, ExperimentConfig&)>;
  const std::map<std::string, Setter> keys = {
      {"lr", [](const std::string& v, ExperimentConfig& c) { return detail::parse_double(v, c.train.lr); }},
      {"weight_decay", [](const std::string& v, ExperimentConfig& c) { return detail::parse_double(v, c.train.weight_decay); }},
      {"beta1", [](const std::string& v, ExperimentConfig& c) { return detail::parse_double(v, c.train.beta1); }},
      {"beta2", [](const std::string& v, ExperimentConfig& c) { return detail::parse_double(v, c.train.beta2); }},
      {"adam_eps", [](const std::string& v, ExperimentConfig& c) { return detail::parse_double(v, c.train.adam_eps); }},
      {"epochs", [](const std::string& v, ExperimentConfig& c) { return detail::parse_count(v, c.train.epochs); }},
      {"batch_size", [](const std::string& v, ExperimentConfig& c) { return detail::parse_count(v, c.train.batch_size); }},
      {"alpha_distill", [](const std::string& v, ExperimentConfig& c) { return detail::parse_double(v, c.train.alpha_distill); }},
      {"smooth_l1_delta", [](const std::string& v, ExperimentConfig& c) { return detail::parse_double(v, c.train.smooth_l1_delta); }},
      {"eps_start", [](const std::string& v, ExperimentConfig& c) { return detail::parse_double(v, c.train.eps_start); }},
      {"eps_end", [](const std::string& v, ExperimentConfig& c) { return detail::parse_double(v, c.train.eps_end); }},
      {"sinkhorn_iters", [](const std::string& v, ExperimentConfig& c) { return detail::parse_count(v, c.train.sinkhorn_iters); }},
      {"sinkhorn_rescale", [](const std::string& v, ExperimentConfig& c) { return detail::parse_bool(v, c.train.sinkhorn_rescale); }},
      {"group_count", [](const std::string& v, ExperimentConfig& c) { return detail::parse_count(v, c.train.group_count); }},
      {"pattern_n", [](const std::string& v, ExperimentConfig& c) { return detail::parse_count(v, c.train.pattern.n_keep); }},
      {"pattern_m", [](const std::string& v, ExperimentConfig& c) { return detail::parse_count(v, c.train.pattern.m_group); }},
      {"seed", [](const std::string& v, ExperimentConfig& c) {
         std::size_t s = 0;
         if (!detail::parse_count(v, s)) return false;
         c.train.seed = s;
         return true;
       }},
      {"record_timing", [](const std::string& v, ExperimentConfig& c) { return detail::parse_bool(v, c.train.record_timing); }},
      {"distill_form", [](const std::string& v, ExperimentConfig& c) {
         if (v == "squared_l2") c.train.distill_form = DistillForm::SquaredL2;
         else if (v == "smooth_l1") c.train.distill_form = DistillForm::SmoothL1;
         else return false;
         return true;
       }},
      {"saliency", [](const std::string& v, ExperimentConfig& c) {
         if (v == "wanda") c.train.saliency_kind = SaliencyKind::Wanda;
         else if (v == "magnitude") c.train.saliency_kind = SaliencyKind::Magnitude;
         else return false;
         return true;
       }},
      {"d_hidden", [](const std::string& v, ExperimentConfig& c) { return detail::parse_count(v, c.task.d_hidden); }},
      {"d_ff", [](const std::string& v, ExperimentConfig& c) { return detail::parse_count(v, c.task.d_ff); }},
      {"tokens", [](const std::string& v, ExperimentConfig& c) { return detail::parse_count(v, c.task.tokens); }},
      {"blocks", [](const std::string& v, ExperimentConfig& c) { return detail::parse_count(v, c.task.blocks); }},
      {"num_classes", [](const std::string& v, ExperimentConfig& c) { return detail::parse_count(v, c.task.num_classes); }},
      {"num_train", [](const std::string& v, ExperimentConfig& c) { return detail::parse_count(v, c.task.num_train); }},
      {"num_eval", [](const std::string& v, ExperimentConfig& c) { return detail::parse_count(v, c.task.num_eval); }},
      {"task_seed", [](const std::string& v, ExperimentConfig& c) {
         std::size_t s = 0;
         if (!detail::parse_count(v, s)) return false;
         c.task.seed = s;
         return true;
       }},
      {"cluster_m", [](const std::string& v, ExperimentConfig& c) { return detail::parse_count(v, c.task.cluster_m); }},
      {"hot_gain", [](const std::string& v, ExperimentConfig& c) { return detail::parse_double(v, c.task.hot_gain); }},
      {"cold_gain", [](const std::string& v, ExperimentConfig& c) { return detail::parse_double(v, c.task.cold_gain); }},
      {"out_dir", [](const std::string& v, ExperimentConfig& c) {
         c.out_dir = v;
         return !v.empty();
       }},
      {"report_format", [](const std::string& v, ExperimentConfig& c) {
         if (v == "json") c.report_format = ReportFormat::Json;
         else if (v == "csv") c.report_format = ReportFormat::Csv;
         else return false;
         return true;
       }},
  };

  ConfigParseResult result;
  std::map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  std::string line;
  std::istringstream stream{std::string(text)};
  while (std::getline(stream, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string stripped = detail::trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      result.error = "line " + std::to_string(line_no) + ": expected key = value, got '" +
                     stripped + "'";
      return result;
    }
    const std::string key = detail::trim(stripped.substr(0, eq));
    const std::string value = detail::trim(stripped.substr(eq + 1));
    const auto it = keys.find(key);
    if (it == keys.end()) {
      result.error = "line " + std::to_string(line_no) + ": unknown key '" + key + "'";
      return result;
    }
    if (auto prev = seen.find(key); prev != seen.end()) {
      result.error = "line " + std::to_string(line_no) + ": duplicate key '" + key +
                     "' (first set on line " + std::to_string(prev->second) + ")";
      return result;
    }
    seen[key] = line_no;
    if (!it->second(value, cfg)) {
      result.error = "line " + std::to_string(line_no) + ": invalid value '" + value +
                     "' for key '" + key + "'";
      return result;
    }
  }

  try {
    cfg.validate();
  } catch (const std::exception& e) {
    result.error = std::string("invalid configuration: ") + e.what();
    return result;
  }
  result.config = std::move(cfg);
  return result;
}

inline ConfigParseResult load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    ConfigParseResult r;
    r.error = "cannot read config file '" + path + "'";
    return r;
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// Digest over the model- and mask-defining keys; a checkpoint may only be
// applied when these match the current config.
inline std::uint64_t config_digest(const ExperimentConfig& cfg) {
  std::ostringstream canon;
  canon << "d_hidden=" << cfg.task.d_hidden << ";d_ff=" << cfg.task.d_ff
        << ";tokens=" << cfg.task.tokens << ";blocks=" << cfg.task.blocks
        << ";num_classes=" << cfg.task.num_classes << ";num_train=" << cfg.task.num_train
        << ";num_eval=" << cfg.task.num_eval << ";task_seed=" << cfg.task.seed
        << ";cluster_m=" << cfg.task.cluster_m << ";hot_gain=" << cfg.task.hot_gain
        << ";cold_gain=" << cfg.task.cold_gain << ";pattern=" << cfg.train.pattern.n_keep
        << ":" << cfg.train.pattern.m_group << ";group_count=" << cfg.train.group_count
        << ";saliency=" << (cfg.train.saliency_kind == SaliencyKind::Wanda ? "wanda" : "magnitude");
  const std::string s = canon.str();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace permprune
