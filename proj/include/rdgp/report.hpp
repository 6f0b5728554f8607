#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rdgp/config.hpp"

// Machine-readable run output: one metrics file of scalar results and
// traces, flat CSV files for curves, and an echo of the resolved config.

namespace rdgp {

inline constexpr const char* kVersionStamp = "rdgp-0.1.0";

class RunReport {
 public:
  void add_scalar(const std::string& name, double value) { scalars_.emplace_back(name, value); }
  void add_text(const std::string& name, const std::string& value) {
    texts_.emplace_back(name, value);
  }
  void add_trace(const std::string& name, const std::vector<double>& values) {
    traces_.emplace_back(name, values);
  }
  void add_table(const std::string& name, const std::string& header,
                 std::vector<std::string> rows) {
    tables_.push_back({name, header, std::move(rows)});
  }

  void write(const std::string& out_dir, const Config& config) const {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir))
      throw std::runtime_error("report: cannot create output directory '" + out_dir + "'");

    {
      std::ofstream m(fs::path(out_dir) / "metrics.txt");
      if (!m) throw std::runtime_error("report: cannot write metrics.txt");
      m << "version = " << kVersionStamp << "\n";
      m << std::setprecision(17);
      for (const auto& [k, v] : texts_) m << k << " = " << v << "\n";
      for (const auto& [k, v] : scalars_) m << k << " = " << v << "\n";
      for (const auto& [k, v] : traces_) {
        m << k << " =";
        for (double x : v) m << " " << x;
        m << "\n";
      }
    }
    for (const auto& [name, values] : traces_) {
      std::ofstream f(fs::path(out_dir) / (name + ".csv"));
      f << std::setprecision(17) << "step," << name << "\n";
      for (std::size_t i = 0; i < values.size(); ++i) f << i << "," << values[i] << "\n";
    }
    for (const auto& t : tables_) {
      std::ofstream f(fs::path(out_dir) / (t.name + ".csv"));
      f << t.header << "\n";
      for (const auto& r : t.rows) f << r << "\n";
    }
    {
      std::ofstream c(fs::path(out_dir) / "config_echo.ini");
      c << config.echo();
    }
  }

 private:
  struct Table {
    std::string name, header;
    std::vector<std::string> rows;
  };
  std::vector<std::pair<std::string, double>> scalars_;
  std::vector<std::pair<std::string, std::string>> texts_;
  std::vector<std::pair<std::string, std::vector<double>>> traces_;
  std::vector<Table> tables_;
};

}  // namespace rdgp
