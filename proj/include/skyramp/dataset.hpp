#pragma once

#include <string>
#include <vector>

#include "skyramp/skysim.hpp"

namespace skyramp::data {

// On-disk layout: <root>/<split>/<day>/<clip_id>/frame_000.png ...
// frame_031.png, mask_000.png ..., pv.csv (minute_index,power_kw),
// meta.json (capacity_kw, lat, lon, start_utc, cloudiness).
void write_dataset(const std::string& root, const std::vector<sim::SkyClip>& clips,
                   double latitude, double longitude);

// Reads one clip directory; throws with the offending path/row on partial
// clips, non-monotone timestamps, or consecutive byte-duplicate frames.
sim::SkyClip read_clip(const std::string& dir, const std::string& split, int day_id);

// All clips of one split, in deterministic (sorted) order.
std::vector<sim::SkyClip> read_split(const std::string& root, const std::string& split);

std::string clip_dir_name(int first_minute);
std::string day_dir_name(int day_id);

} // namespace skyramp::data
