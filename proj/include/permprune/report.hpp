#pragma once
// TrainReport serialization. One record per epoch with fixed field names;
// doubles are printed with 17 significant digits so values round-trip and
// identical runs produce identical bytes.

#include <cstdio>
#include <string>

#include <json.hpp>

#include "permprune/config.hpp"
#include "permprune/trainer.hpp"

namespace permprune {

namespace detail {
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace detail

inline std::string report_json_bytes(const TrainReport& report) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : report.records) {
    arr.push_back({{"epoch", r.epoch},
                   {"eps", r.eps},
                   {"loss_total", r.loss_total},
                   {"loss_task", r.loss_task},
                   {"loss_distill", r.loss_distill},
                   {"eval_acc", r.eval_acc},
                   {"retained_saliency", r.retained_saliency},
                   {"seconds", r.seconds}});
  }
  return arr.dump(2) + "\n";
}

inline std::string report_csv_bytes(const TrainReport& report) {
  std::string out =
      "epoch,eps,loss_total,loss_task,loss_distill,eval_acc,retained_saliency,seconds\n";
  for (const auto& r : report.records) {
    out += std::to_string(r.epoch);
    for (double v : {r.eps, r.loss_total, r.loss_task, r.loss_distill, r.eval_acc,
                     r.retained_saliency, r.seconds}) {
      out += ',';
      out += detail::fmt_double(v);
    }
    out += '\n';
  }
  return out;
}

inline std::string report_bytes(const TrainReport& report, ReportFormat format) {
  return format == ReportFormat::Json ? report_json_bytes(report) : report_csv_bytes(report);
}

inline bool report_is_finite(const TrainReport& report) {
  for (const auto& r : report.records) {
    for (double v : {r.eps, r.loss_total, r.loss_task, r.loss_distill, r.eval_acc,
                     r.retained_saliency, r.seconds})
      if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace permprune
