#include "sigcast/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sigcast/rng.hpp"

namespace sigcast::io {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, std::size_t line,
                       const std::string& what) {
  throw ParseError(path.string() + ":" + std::to_string(line) + ": " + what);
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  return out;
}

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  std::filesystem::path p = csv_path;
  p.replace_extension(".meta.json");
  return p;
}

// Shortest round-trip decimal for doubles; keeps emitted files byte-stable.
std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::vector<Post> read_posts_jsonl(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::vector<Post> posts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(path, lineno, std::string("invalid JSON: ") + e.what());
    }
    for (const char* k : {"post_id", "t0", "x", "u", "o", "history"}) {
      if (!j.contains(k)) fail(path, lineno, std::string("missing field '") + k + "'");
    }
    Post p;
    try {
      p.post_id = j.at("post_id").get<std::string>();
      p.t0 = j.at("t0").get<Timestamp>();
      p.content_ref = j.at("x").get<std::string>();
      p.user_ref = j.at("u").get<std::string>();
      p.category = j.at("o").get<std::string>();
      for (const auto& row : j.at("history")) {
        if (!row.is_array() || row.size() != 1 + kEngagementDims) {
          fail(path, lineno, "history rows must be [t,likes,shares,comments,emoji]");
        }
        Observation o;
        o.t = row[0].get<Timestamp>();
        for (int d = 0; d < kEngagementDims; ++d) {
          o.e.counts[static_cast<std::size_t>(d)] =
              row[static_cast<std::size_t>(d) + 1].get<std::int64_t>();
        }
        p.history.obs.push_back(o);
      }
    } catch (const json::exception& e) {
      fail(path, lineno, std::string("bad field type: ") + e.what());
    }
    try {
      p.validate();
    } catch (const std::exception& e) {
      fail(path, lineno, e.what());
    }
    posts.push_back(std::move(p));
  }
  return posts;
}

void write_posts_jsonl(const std::filesystem::path& path, const std::vector<Post>& posts) {
  std::ofstream out = open_out(path);
  for (const Post& p : posts) {
    ordered_json j;
    j["post_id"] = p.post_id;
    j["t0"] = p.t0;
    j["x"] = p.content_ref;
    j["u"] = p.user_ref;
    j["o"] = p.category;
    json hist = json::array();
    for (const Observation& o : p.history.obs) {
      hist.push_back({o.t, o.e.counts[0], o.e.counts[1], o.e.counts[2], o.e.counts[3]});
    }
    j["history"] = std::move(hist);
    out << j.dump() << "\n";
  }
}

SignalTimeline read_signal_csv(const std::filesystem::path& csv_path) {
  const auto meta_path = sidecar_path(csv_path);
  std::ifstream meta_in = open_in(meta_path);
  json meta;
  try {
    meta = json::parse(meta_in);
  } catch (const json::parse_error& e) {
    throw ParseError(meta_path.string() + ": invalid JSON: " + e.what());
  }
  if (!meta.contains("grid_step_seconds")) {
    throw ParseError(meta_path.string() + ": missing 'grid_step_seconds'");
  }

  SignalTimeline sig;
  sig.grid_step = meta.at("grid_step_seconds").get<Duration>();

  std::ifstream in = open_in(csv_path);
  std::string line;
  std::size_t lineno = 0;
  bool first_row = true;
  Timestamp prev_t = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1) {
      if (line != "t,g") fail(csv_path, lineno, "expected header 't,g'");
      continue;
    }
    std::size_t comma = line.find(',');
    if (comma == std::string::npos) fail(csv_path, lineno, "expected 't,g' row");
    Timestamp t{};
    double g{};
    auto r1 = std::from_chars(line.data(), line.data() + comma, t);
    auto r2 = std::from_chars(line.data() + comma + 1, line.data() + line.size(), g);
    if (r1.ec != std::errc{} || r2.ec != std::errc{}) {
      fail(csv_path, lineno, "could not parse row '" + line + "'");
    }
    if (first_row) {
      sig.start = t;
      first_row = false;
    } else if (t != prev_t + sig.grid_step) {
      fail(csv_path, lineno, "timestamps must advance by the declared grid step");
    }
    prev_t = t;
    sig.values.push_back(g);
  }
  try {
    sig.validate();
  } catch (const std::exception& e) {
    throw ParseError(csv_path.string() + ": " + e.what());
  }
  return sig;
}

void write_signal_csv(const std::filesystem::path& csv_path, const SignalTimeline& signal) {
  {
    std::ofstream out = open_out(csv_path);
    out << "t,g\n";
    for (std::size_t i = 0; i < signal.size(); ++i) {
      out << signal.time_at(i) << "," << fmt_double(signal.values[i]) << "\n";
    }
  }
  ordered_json meta;
  meta["grid_step_seconds"] = signal.grid_step;
  meta["n_points"] = signal.size();
  std::ofstream out = open_out(sidecar_path(csv_path));
  out << meta.dump(2) << "\n";
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out = open_out(path);
  out << content;
}

std::string file_digest(const std::filesystem::path& path) {
  const std::string content = read_text_file(path);
  std::uint64_t h1 = rng::hash_str(content);
  std::uint64_t h2 = rng::mix(h1 ^ 0x517cc1b727220a95ULL ^ content.size());
  char buf[33];
  std::snprintf(buf, sizeof(buf), "%016llx%016llx", static_cast<unsigned long long>(h1),
                static_cast<unsigned long long>(h2));
  return std::string(buf);
}

}  // namespace sigcast::io
