#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "epimix/model.hpp"
#include "epimix/spatial_graph.hpp"

namespace epimix {

// Input problems the command layer maps to its ingestion exit code. Messages
// carry the file and row/column location.
struct IngestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shortest-exact decimal for a double: survives a parse round trip bitwise.
std::string format_double(double v);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 14695981039346656037ull);

// Hash of the canonical panel serialization: area ids, counts, covariate,
// holdout. Two ingests of the same data agree regardless of file layout.
std::uint64_t data_hash(const PanelData& data);

struct IngestResult {
  PanelData data;
  AdjacencyGraph graph;
};

// Counts CSV: header "area_id,period,count", one row per (area, period),
// periods a contiguous integer range, every cell present. Covariate CSV:
// header "area_id,population", one row per area; stored as population/1e5,
// mean-centered. Adjacency file: zero-based index pairs into the
// lexicographic area order. reserve_holdout moves the final period out of
// the panel into PanelData::holdout.
IngestResult ingest(const std::string& counts_path, const std::string& adjacency_path,
                    const std::string& covariate_path, bool reserve_holdout);

// One [section] of "key=value" lines; '#' starts a comment.
void write_kv_file(const std::string& path, const std::string& section,
                   const std::vector<std::pair<std::string, std::string>>& entries);

// Parses a key-value file back; section headers are skipped, duplicate keys
// keep the last value.
std::map<std::string, std::string> read_kv_file(const std::string& path);

// Rectangular CSV of doubles with a header row.
void write_matrix_csv(const std::string& path, const std::vector<std::string>& header,
                      const Eigen::MatrixXd& values);
Eigen::MatrixXd read_matrix_csv(const std::string& path, std::vector<std::string>& header);

// Generic small CSV reader: header plus string rows.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
CsvTable read_csv(const std::string& path);

std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace epimix
