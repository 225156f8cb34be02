#include "epimix/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>

namespace epimix {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

long parse_long(const std::string& field, const std::string& where) {
  const std::string t = trim(field);
  if (t.empty()) throw IngestError(where + ": empty field");
  char* end = nullptr;
  errno = 0;
  const long v = std::strtol(t.c_str(), &end, 10);
  if (errno != 0 || end == t.c_str() || *end != '\0') {
    throw IngestError(where + ": non-numeric field '" + t + "'");
  }
  return v;
}

double parse_double(const std::string& field, const std::string& where) {
  const std::string t = trim(field);
  if (t.empty()) throw IngestError(where + ": empty field");
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(t.c_str(), &end);
  if (end == t.c_str() || *end != '\0') {
    throw IngestError(where + ": non-numeric field '" + t + "'");
  }
  return v;
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open file: " + path);
  return in;
}

void require_header(const CsvTable& table, const std::vector<std::string>& expected,
                    const std::string& path) {
  if (table.header != expected) {
    std::string want;
    for (const auto& h : expected) want += (want.empty() ? "" : ",") + h;
    throw IngestError(path + ": expected header '" + want + "'");
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    const double back = std::strtod(buf, nullptr);
    if (back == v || (std::isnan(back) && std::isnan(v))) return buf;
  }
  return buf;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t data_hash(const PanelData& data) {
  std::uint64_t h = fnv1a("panel.v1");
  std::string buf;
  for (int i = 0; i < data.n_areas(); ++i) {
    buf = "A:" + data.area_ids[i] + ";X:" + format_double(data.x[i]) + ";Y:";
    for (int t = 0; t < data.n_periods(); ++t) {
      buf += std::to_string(static_cast<long long>(data.y(i, t)));
      buf += ',';
    }
    if (data.holdout) {
      buf += "H:" + std::to_string(static_cast<long long>((*data.holdout)[i]));
    }
    buf += '\n';
    h = fnv1a(buf, h);
  }
  return h;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  CsvTable table;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    for (auto& f : fields) f = trim(f);
    if (table.header.empty()) {
      table.header = std::move(fields);
    } else {
      table.rows.push_back(std::move(fields));
    }
  }
  if (table.header.empty()) throw IngestError(path + ": empty file");
  return table;
}

IngestResult ingest(const std::string& counts_path, const std::string& adjacency_path,
                    const std::string& covariate_path, bool reserve_holdout) {
  const CsvTable counts = read_csv(counts_path);
  require_header(counts, {"area_id", "period", "count"}, counts_path);

  std::map<std::string, std::map<long, double>> cells;
  long p_min = 0, p_max = 0;
  bool first = true;
  for (std::size_t r = 0; r < counts.rows.size(); ++r) {
    const std::string where = counts_path + ": row " + std::to_string(r + 2);
    const auto& row = counts.rows[r];
    if (row.size() != 3) throw IngestError(where + ": expected 3 fields");
    const std::string& area = row[0];
    if (area.empty()) throw IngestError(where + ": empty area_id");
    const long period = parse_long(row[1], where + ", column period");
    const long count = parse_long(row[2], where + ", column count");
    if (count < 0) {
      throw IngestError(where + ", column count: negative count for area '" + area + "'");
    }
    if (!cells[area].emplace(period, static_cast<double>(count)).second) {
      throw IngestError(where + ": duplicate cell (area '" + area + "', period " +
                        std::to_string(period) + ")");
    }
    p_min = first ? period : std::min(p_min, period);
    p_max = first ? period : std::max(p_max, period);
    first = false;
  }
  if (cells.size() < 2) throw IngestError(counts_path + ": need at least 2 areas");
  const long t_all = p_max - p_min + 1;
  for (const auto& [area, per] : cells) {
    for (long p = p_min; p <= p_max; ++p) {
      if (!per.count(p)) {
        throw IngestError(counts_path + ": missing cell (area '" + area + "', period " +
                          std::to_string(p) + ")");
      }
    }
  }

  IngestResult out;
  const int n = static_cast<int>(cells.size());
  out.data.area_ids.reserve(cells.size());
  for (const auto& [area, per] : cells) out.data.area_ids.push_back(area);
  out.data.y.resize(n, t_all);
  {
    int i = 0;
    for (const auto& [area, per] : cells) {
      int t = 0;
      for (const auto& [period, count] : per) out.data.y(i, t++) = count;
      ++i;
    }
  }

  const CsvTable cov = read_csv(covariate_path);
  require_header(cov, {"area_id", "population"}, covariate_path);
  std::map<std::string, double> pops;
  for (std::size_t r = 0; r < cov.rows.size(); ++r) {
    const std::string where = covariate_path + ": row " + std::to_string(r + 2);
    const auto& row = cov.rows[r];
    if (row.size() != 2) throw IngestError(where + ": expected 2 fields");
    if (!cells.count(row[0])) {
      throw IngestError(where + ": unknown area '" + row[0] + "'");
    }
    const double pop = parse_double(row[1], where + ", column population");
    if (!pops.emplace(row[0], pop).second) {
      throw IngestError(where + ": duplicate area '" + row[0] + "'");
    }
  }
  out.data.x.resize(n);
  for (int i = 0; i < n; ++i) {
    const auto it = pops.find(out.data.area_ids[i]);
    if (it == pops.end()) {
      throw IngestError(covariate_path + ": missing area '" + out.data.area_ids[i] + "'");
    }
    out.data.x[i] = it->second / 1e5;
  }
  out.data.x.array() -= out.data.x.mean();

  try {
    const std::vector<Edge> edges = read_adjacency_file(adjacency_path);
    out.graph = build_graph(edges, n);
  } catch (const std::exception& e) {
    throw IngestError(adjacency_path + ": " + e.what());
  }

  if (reserve_holdout) {
    if (t_all < 3) {
      throw IngestError(counts_path + ": reserving a holdout period needs at least 3 periods");
    }
    out.data.holdout = out.data.y.col(t_all - 1).matrix();
    out.data.y = Eigen::ArrayXXd(out.data.y.leftCols(t_all - 1));
  }

  try {
    out.data.validate();
  } catch (const std::exception& e) {
    throw IngestError(counts_path + ": " + e.what());
  }
  return out;
}

void write_kv_file(const std::string& path, const std::string& section,
                   const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ofstream outf(path);
  if (!outf) throw std::runtime_error("cannot write file: " + path);
  outf << "[" << section << "]\n";
  for (const auto& [k, v] : entries) outf << k << "=" << v << "\n";
  if (!outf) throw std::runtime_error("write failed: " + path);
}

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';' || t[0] == '[') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw IngestError(path + ": malformed line '" + t + "'");
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return kv;
}

void write_matrix_csv(const std::string& path, const std::vector<std::string>& header,
                      const Eigen::MatrixXd& values) {
  if (static_cast<long>(header.size()) != values.cols()) {
    throw std::invalid_argument("write_matrix_csv: header width mismatch");
  }
  std::ofstream outf(path);
  if (!outf) throw std::runtime_error("cannot write file: " + path);
  for (std::size_t c = 0; c < header.size(); ++c) {
    outf << (c ? "," : "") << header[c];
  }
  outf << "\n";
  std::string line;
  for (long r = 0; r < values.rows(); ++r) {
    line.clear();
    for (long c = 0; c < values.cols(); ++c) {
      if (c) line += ',';
      line += format_double(values(r, c));
    }
    line += '\n';
    outf << line;
  }
  if (!outf) throw std::runtime_error("write failed: " + path);
}

Eigen::MatrixXd read_matrix_csv(const std::string& path, std::vector<std::string>& header) {
  std::ifstream in = open_or_throw(path);
  std::string line;
  if (!std::getline(in, line)) throw IngestError(path + ": empty file");
  header = split_csv_line(trim(line));
  const long cols = static_cast<long>(header.size());
  std::vector<double> flat;
  long rows = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const char* p = line.c_str();
    for (long c = 0; c < cols; ++c) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) throw IngestError(path + ": row " + std::to_string(rows + 2) + ": bad number");
      flat.push_back(v);
      p = end;
      if (c + 1 < cols) {
        while (*p == ' ') ++p;
        if (*p != ',') {
          throw IngestError(path + ": row " + std::to_string(rows + 2) + ": expected comma");
        }
        ++p;
      }
    }
    ++rows;
  }
  Eigen::MatrixXd values(rows, cols);
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) values(r, c) = flat[r * cols + c];
  }
  return values;
}

}  // namespace epimix
