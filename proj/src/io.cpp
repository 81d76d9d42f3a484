#include "streambp/experiments/io.hpp"

#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "streambp/experiments/config.hpp"

namespace streambp::experiments {

using nlohmann::json;

OutputFormat parse_format(const std::string& name) {
  if (name == "csv") return OutputFormat::Csv;
  if (name == "json") return OutputFormat::Json;
  throw ConfigError("unknown output format: " + name + " (expected csv or json)");
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---- kalman ----

void write_csv(std::ostream& os, const KalmanReport& r) {
  os << "dim,steps,seed,max_mean_abs_diff,max_cov_abs_diff,bp_ms,kalman_ms\n";
  os << r.cfg.dim << ',' << r.cfg.steps << ',' << r.cfg.seed << ',' << g17(r.max_mean_abs_diff)
     << ',' << g17(r.max_cov_abs_diff) << ',' << g17(r.bp_ms) << ',' << g17(r.kalman_ms) << '\n';
}

void write_json(std::ostream& os, const KalmanReport& r) {
  json j;
  j["experiment"] = "kalman";
  j["dim"] = r.cfg.dim;
  j["steps"] = r.cfg.steps;
  j["seed"] = r.cfg.seed;
  j["max_mean_abs_diff"] = r.max_mean_abs_diff;
  j["max_cov_abs_diff"] = r.max_cov_abs_diff;
  j["bp_ms"] = r.bp_ms;
  j["kalman_ms"] = r.kalman_ms;
  os << j.dump(2) << '\n';
}

// ---- bridge ----

void write_csv(std::ostream& os, const BridgeReport& r) {
  os << "i,j,s,t,cov,exact,abs_err\n";
  const int n = r.cfg.n_steps;
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= n; ++j) {
      const double s = r.cfg.horizon_time * i / n;
      const double t = r.cfg.horizon_time * j / n;
      const double c = r.cov(i - 1, j - 1);
      const double e = r.exact(i - 1, j - 1);
      os << i << ',' << j << ',' << g17(s) << ',' << g17(t) << ',' << g17(c) << ',' << g17(e)
         << ',' << g17(std::abs(c - e)) << '\n';
    }
  }
}

void write_json(std::ostream& os, const BridgeReport& r) {
  json j;
  j["experiment"] = "bridge";
  j["n_steps"] = r.cfg.n_steps;
  j["T"] = r.cfg.horizon_time;
  j["max_abs_err"] = r.max_abs_err;
  json rows = json::array();
  const int n = r.cfg.n_steps;
  for (int i = 1; i <= n; ++i) {
    json row = json::array();
    for (int k = 1; k <= n; ++k) row.push_back(r.cov(i - 1, k - 1));
    rows.push_back(std::move(row));
  }
  j["cov"] = std::move(rows);
  os << j.dump(2) << '\n';
}

// ---- tracker ----

void write_csv(std::ostream& os, const TrackerReport& r) {
  os << "sim,seed,algo,particles,divergence_step,wallclock_ms\n";
  for (const TrackerRow& row : r.rows) {
    os << row.sim << ',' << row.seed << ',' << row.algo << ',' << row.particles << ','
       << row.divergence_step << ',' << g17(row.wallclock_ms) << '\n';
  }
}

void write_json(std::ostream& os, const TrackerReport& r) {
  json j;
  j["experiment"] = "tracker";
  j["algo"] = r.cfg.algo;
  j["particles"] = r.cfg.particles;
  j["sims"] = r.cfg.sims;
  j["seed"] = r.cfg.seed;
  j["horizon"] = r.cfg.model.horizon;
  j["summary"] = {{"median", r.summary.median}, {"q25", r.summary.q25}, {"q75", r.summary.q75}};
  json rows = json::array();
  for (const TrackerRow& row : r.rows) {
    rows.push_back({{"sim", row.sim},
                    {"seed", row.seed},
                    {"algo", row.algo},
                    {"particles", row.particles},
                    {"divergence_step", row.divergence_step},
                    {"wallclock_ms", row.wallclock_ms}});
  }
  j["rows"] = std::move(rows);
  os << j.dump(2) << '\n';
}

// ---- bench ----

void write_csv(std::ostream& os, const BenchReport& r) {
  os << "horizon,observe,steps_per_sec,wallclock_ms\n";
  for (const BenchRow& row : r.rows) {
    os << row.horizon << ',' << (r.cfg.observe ? 1 : 0) << ',' << g17(row.steps_per_sec) << ','
       << g17(row.wallclock_ms) << '\n';
  }
}

void write_json(std::ostream& os, const BenchReport& r) {
  json j;
  j["experiment"] = "bench";
  j["dim"] = r.cfg.dim;
  j["observe"] = r.cfg.observe;
  json rows = json::array();
  for (const BenchRow& row : r.rows) {
    rows.push_back({{"horizon", row.horizon},
                    {"steps_per_sec", row.steps_per_sec},
                    {"wallclock_ms", row.wallclock_ms}});
  }
  j["results"] = std::move(rows);
  os << j.dump(2) << '\n';
}

}  // namespace streambp::experiments
