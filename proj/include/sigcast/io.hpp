#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "sigcast/timeline.hpp"

namespace sigcast::io {

class ParseError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Posts: JSONL, one object per line with fields
//   post_id, t0, x, u, o, history:[[t,likes,shares,comments,emoji],...]
std::vector<Post> read_posts_jsonl(const std::filesystem::path& path);
void write_posts_jsonl(const std::filesystem::path& path, const std::vector<Post>& posts);

// Signals: CSV with header "t,g"; the grid step lives in a sidecar
// metadata JSON next to the CSV ("<stem>.meta.json").
SignalTimeline read_signal_csv(const std::filesystem::path& csv_path);
void write_signal_csv(const std::filesystem::path& csv_path, const SignalTimeline& signal);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

// Hex SHA-like digest (FNV-based) of a file, for reproducibility checks.
std::string file_digest(const std::filesystem::path& path);

}  // namespace sigcast::io
