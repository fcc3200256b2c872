#pragma once

#include <string>
#include <vector>

#include "abi/msw.hpp"

namespace abisim {

// CSV with a header row; values printed with 17 significant digits so that
// write/read round-trips bit-exactly.
void write_matrix_csv(const std::string& path, const std::vector<std::string>& header,
                      const Mat& rows);

struct CsvTable {
  std::vector<std::string> header;
  Mat rows;
};

CsvTable read_matrix_csv(const std::string& path);

std::string format_double(double v);

}  // namespace abisim
