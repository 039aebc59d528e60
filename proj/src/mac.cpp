// Copyright 2026 The coopsense Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cmath>
#include <string>

#include "coopsense/backhaul.hpp"
#include "coopsense/errors.hpp"

namespace coopsense {

MacRegion build_mac_region(const Scene& scene, const std::vector<int>& members) {
  const int m = static_cast<int>(members.size());
  require(m >= 1, "MAC region needs at least one member");
  if (m > kMaxMacUsers) {
    fail(ErrorCode::kInvalidArgument,
         "MAC region limited to " + std::to_string(kMaxMacUsers) + " members");
  }
  for (int id : members) require(id >= 0 && id < scene.size(), "member id out of range");
  MacRegion region;
  region.members = members;
  region.capacity.assign(std::size_t{1} << m, 0.0);
  for (unsigned mask = 1; mask < (1u << m); ++mask) {
    double snr = 0.0;
    for (int i = 0; i < m; ++i) {
      if (mask & (1u << i)) {
        const int id = members[i];
        snr += scene.backhaul_power[id] * scene.backhaul_gain[id] / scene.backhaul_noise;
      }
    }
    region.capacity[mask] = std::log2(1.0 + snr);
  }
  return region;
}

double relaxed_channel_uses(const std::vector<double>& bits_per_member, const MacRegion& region) {
  const int m = region.size();
  require(static_cast<int>(bits_per_member.size()) == m, "bit totals must match MAC members");
  double worst = 0.0;
  for (unsigned mask = 1; mask < (1u << m); ++mask) {
    double sum = 0.0;
    for (int i = 0; i < m; ++i) {
      if (mask & (1u << i)) sum += bits_per_member[i];
    }
    worst = std::max(worst, sum / region[mask]);
  }
  return worst;
}

int min_channel_uses(const std::vector<double>& bits_per_member, const MacRegion& region) {
  for (double b : bits_per_member) require(b >= 0.0, "bit totals must be nonnegative");
  const double ratio = relaxed_channel_uses(bits_per_member, region);
  // Exact integer ratios such as 12 / 3 can land a few ulps above the integer.
  const double w = std::ceil(ratio * (1.0 - 1e-12));
  return std::max(1, static_cast<int>(w));
}

double surrogate_weight(double x, double x_t, double gamma, double noise_var, NoiseModel model) {
  require(x_t >= 0.0, "tangent point must be nonnegative");
  return (x - x_t) * info_weight_slope(gamma, noise_var, x_t, model) +
         info_weight(gamma, noise_var, x_t, model);
}

}  // namespace coopsense
