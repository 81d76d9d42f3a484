#pragma once

#include <ostream>
#include <string>

#include "streambp/experiments/runners.hpp"

namespace streambp::experiments {

enum class OutputFormat { Csv, Json };

OutputFormat parse_format(const std::string& name);

// All floating-point CSV cells are printed with 17 significant digits so
// output is reproducible and round-trips exactly.
std::string g17(double v);

void write_csv(std::ostream& os, const KalmanReport& report);
void write_csv(std::ostream& os, const BridgeReport& report);
void write_csv(std::ostream& os, const TrackerReport& report);
void write_csv(std::ostream& os, const BenchReport& report);

void write_json(std::ostream& os, const KalmanReport& report);
void write_json(std::ostream& os, const BridgeReport& report);
void write_json(std::ostream& os, const TrackerReport& report);
void write_json(std::ostream& os, const BenchReport& report);

template <typename Report>
void write_report(std::ostream& os, const Report& report, OutputFormat format) {
  if (format == OutputFormat::Csv) {
    write_csv(os, report);
  } else {
    write_json(os, report);
  }
}

}  // namespace streambp::experiments
