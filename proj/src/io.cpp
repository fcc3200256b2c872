#include "abi/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace abisim {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

void write_matrix_csv(const std::string& path, const std::vector<std::string>& header,
                      const Mat& rows) {
  if (static_cast<Eigen::Index>(header.size()) != rows.cols())
    throw std::invalid_argument("csv: header width does not match matrix");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("csv: cannot open '" + path + "' for writing");
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j > 0) out << ',';
    out << header[j];
  }
  out << '\n';
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
      if (j > 0) out << ',';
      out << format_double(rows(i, j));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("csv: write to '" + path + "' failed");
}

CsvTable read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("csv: '" + path + "' is empty");
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) table.header.push_back(cell);
  if (table.header.empty()) throw std::runtime_error("csv: '" + path + "' has an empty header");

  std::vector<std::vector<double>> data;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error("csv: non-numeric cell '" + cell + "' in '" + path + "'");
      }
    }
    if (row.size() != table.header.size())
      throw std::runtime_error("csv: ragged row in '" + path + "'");
    data.push_back(std::move(row));
  }
  table.rows.resize(static_cast<Eigen::Index>(data.size()),
                    static_cast<Eigen::Index>(table.header.size()));
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t j = 0; j < data[i].size(); ++j)
      table.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = data[i][j];
  return table;
}

}  // namespace abisim
