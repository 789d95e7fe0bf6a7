#include "esc/events.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <tuple>

#include "esc/container.hpp"
#include "esc/error.hpp"

namespace esc::events {

namespace {

constexpr std::size_t kHeaderBytes = 16;
constexpr std::size_t kRecordBytes = 13;

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& off) {
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

EventStream parse_event_bytes(const std::string& bytes, const std::filesystem::path& path) {
  if (bytes.size() < kHeaderBytes || bytes.compare(0, 4, "EVT0") != 0) {
    throw FormatError(path.string() + ": not an EVT0 event file");
  }
  std::size_t off = 4;
  EventStream s;
  s.width = get<std::uint16_t>(bytes, off);
  s.height = get<std::uint16_t>(bytes, off);
  (void)get<std::uint32_t>(bytes, off);
  const auto count = get<std::uint32_t>(bytes, off);
  if (bytes.size() != kHeaderBytes + count * kRecordBytes) {
    throw FormatError(path.string() + ": record count does not match file size");
  }
  s.events.resize(count);
  for (auto& e : s.events) {
    e.x = get<std::uint16_t>(bytes, off);
    e.y = get<std::uint16_t>(bytes, off);
    e.t = get<std::int64_t>(bytes, off);
    e.p = get<std::int8_t>(bytes, off);
  }
  return s;
}

}  // namespace

bool event_less(const EventRecord& a, const EventRecord& b) {
  return std::tie(a.t, a.y, a.x, a.p) < std::tie(b.t, b.y, b.x, b.p);
}

void EventStream::validate() const {
  if (width <= 0 || height <= 0) throw InputError("event stream has no sensor resolution");
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (e.x >= width || e.y >= height) {
      throw InputError("event " + std::to_string(i) + " at (" + std::to_string(e.x) + "," + std::to_string(e.y) +
                       ") outside " + std::to_string(width) + "x" + std::to_string(height));
    }
    if (e.p != 1 && e.p != -1) throw InputError("event " + std::to_string(i) + " has polarity " + std::to_string(e.p));
    if (e.t <= t_start || e.t > t_end) throw InputError("event " + std::to_string(i) + " outside (t_start, t_end]");
    if (i > 0 && e.t < events[i - 1].t) throw InputError("event stream not sorted at index " + std::to_string(i));
  }
}

EventStream EventStream::slice(std::int64_t t0, std::int64_t t1) const {
  EventStream out;
  out.t_start = t0;
  out.t_end = t1;
  out.width = width;
  out.height = height;
  auto lo = std::upper_bound(events.begin(), events.end(), t0, [](std::int64_t t, const EventRecord& e) { return t < e.t; });
  auto hi = std::upper_bound(events.begin(), events.end(), t1, [](std::int64_t t, const EventRecord& e) { return t < e.t; });
  if (lo < hi) out.events.assign(lo, hi);
  return out;
}

VoxelGrid build_voxel_grid(const EventStream& stream, int bins) {
  if (bins < 1) throw ConfigError("voxel grid needs at least one bin");
  if (stream.t_end <= stream.t_start) throw InputError("voxel grid: empty time window");
  VoxelGrid grid{Tensor({bins, stream.height, stream.width})};
  const double span = static_cast<double>(stream.t_end - stream.t_start);
  for (const auto& e : stream.events) {
    if (e.t <= stream.t_start || e.t > stream.t_end) continue;
    if (e.x >= stream.width || e.y >= stream.height) throw InputError("voxel grid: event outside sensor");
    const double tn = (bins - 1) * static_cast<double>(e.t - stream.t_start) / span;
    const int k0 = std::min(static_cast<int>(std::floor(tn)), bins - 1);
    const double frac = tn - k0;
    grid.data.at(k0, e.y, e.x) += e.p * (1.0 - frac);
    if (frac > 0.0 && k0 + 1 < bins) grid.data.at(k0 + 1, e.y, e.x) += e.p * frac;
  }
  return grid;
}

void write_event_file(const std::filesystem::path& path, const EventStream& stream) {
  if (stream.width > 0xffff || stream.height > 0xffff) throw InputError("sensor too large for EVT0");
  std::string out;
  out.reserve(kHeaderBytes + stream.events.size() * kRecordBytes);
  out += "EVT0";
  put<std::uint16_t>(out, static_cast<std::uint16_t>(stream.width));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(stream.height));
  put<std::uint32_t>(out, 0);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(stream.events.size()));
  for (const auto& e : stream.events) {
    put(out, e.x);
    put(out, e.y);
    put(out, e.t);
    put(out, e.p);
  }
  io::write_file(path, out);
}

EventStream read_event_file(const std::filesystem::path& path) {
  EventStream s = parse_event_bytes(io::read_file(path), path);
  s.t_start = s.events.empty() ? 0 : s.events.front().t - 1;
  s.t_end = s.events.empty() ? 1 : s.events.back().t;
  return s;
}

EventStream read_event_file(const std::filesystem::path& path, std::int64_t t_start, std::int64_t t_end) {
  EventStream s = parse_event_bytes(io::read_file(path), path);
  s.t_start = t_start;
  s.t_end = t_end;
  s.validate();
  return s;
}

EventStream read_event_csv(const std::filesystem::path& path, int width, int height, std::int64_t t_start,
                           std::int64_t t_end) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  EventStream s;
  s.width = width;
  s.height = height;
  s.t_start = t_start;
  s.t_end = t_end;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    long x, y, p;
    long long t;
    if (!(ls >> x >> y >> t >> p)) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected x,y,t,p");
    if (x < 0 || y < 0 || x > 0xffff || y > 0xffff) throw InputError(path.string() + ":" + std::to_string(lineno) + ": bad coordinate");
    s.events.push_back({static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), t, static_cast<std::int8_t>(p)});
  }
  std::stable_sort(s.events.begin(), s.events.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
  s.validate();
  return s;
}

}  // namespace esc::events
