#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "esc/tensor.hpp"

namespace esc::events {

// One brightness-change record. Timestamps are microseconds.
struct EventRecord {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int64_t t = 0;
  std::int8_t p = 1;  // +1 or -1

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

// Ordering used whenever streams are sorted or merged: time first, then
// position and polarity so equal-time events have a reproducible order.
bool event_less(const EventRecord& a, const EventRecord& b);

// Events inside the half-open window (t_start, t_end], sorted by time.
struct EventStream {
  std::vector<EventRecord> events;
  std::int64_t t_start = 0;
  std::int64_t t_end = 0;
  int width = 0;
  int height = 0;

  // Throws InputError on the first broken invariant (bounds, polarity, order, window).
  void validate() const;
  [[nodiscard]] std::int64_t duration() const noexcept { return t_end - t_start; }
  // Events with t_start < t <= t_end, re-windowed.
  [[nodiscard]] EventStream slice(std::int64_t t0, std::int64_t t1) const;

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

// Signed-polarity voxel grid, stored {bins, H, W}.
struct VoxelGrid {
  Tensor data;
  [[nodiscard]] int bins() const { return data.channels(); }
};

inline constexpr int kDefaultVoxelBins = 5;

// Each event adds its polarity to pixel (y, x), split linearly between the two
// temporal bins around t* = (bins - 1) * (t - t_start) / (t_end - t_start).
// Events outside (t_start, t_end] do not contribute.
VoxelGrid build_voxel_grid(const EventStream& stream, int bins = kDefaultVoxelBins);

// Binary record stream: 16-byte header ("EVT0", uint16 width, uint16 height,
// uint32 reserved, uint32 count) followed by packed 13-byte records
// (uint16 x, uint16 y, int64 t, int8 p), all little-endian.
void write_event_file(const std::filesystem::path& path, const EventStream& stream);
// The window is not stored in the file; pass it explicitly or let it default to
// (first.t - 1, last.t].
EventStream read_event_file(const std::filesystem::path& path);
EventStream read_event_file(const std::filesystem::path& path, std::int64_t t_start, std::int64_t t_end);

// Plain-text fixtures: one "x,y,t,p" line per event; '#' starts a comment.
EventStream read_event_csv(const std::filesystem::path& path, int width, int height, std::int64_t t_start,
                           std::int64_t t_end);

}  // namespace esc::events
