#pragma once

// Generated by tools/gen_korobov_table.py. Do not edit by hand.
// Weighted P_2-optimal Korobov generators per lattice size and dimension.

#include <cstdint>

namespace pmlm::detail {

inline constexpr int korobov_ladder_size = 18;
inline constexpr int korobov_max_tuned_dim = 12;

struct korobov_entry {
  std::uint64_t n;
  std::uint64_t generator[12];
};

inline constexpr korobov_entry korobov_table[18] = {
  {17, {1, 5, 5, 7, 7, 7, 7, 7, 7, 7, 7, 7}},
  {37, {1, 10, 13, 14, 14, 14, 7, 7, 7, 13, 13, 17}},
  {67, {1, 18, 18, 16, 16, 16, 16, 16, 16, 16, 16, 16}},
  {131, {1, 50, 17, 32, 32, 47, 32, 47, 32, 32, 32, 32}},
  {257, {1, 71, 80, 96, 96, 72, 96, 49, 96, 96, 96, 96}},
  {521, {1, 144, 229, 178, 82, 145, 196, 196, 196, 145, 207, 207}},
  {1031, {1, 288, 452, 452, 402, 230, 73, 311, 311, 311, 311, 311}},
  {2053, {1, 468, 430, 960, 640, 640, 247, 521, 521, 521, 521, 521}},
  {4099, {1, 1588, 756, 1522, 1522, 1606, 1606, 1606, 908, 1772, 738, 738}},
  {8209, {1, 2287, 3221, 2283, 2163, 2010, 3743, 3743, 3173, 3173, 3173, 3173}},
  {16411, {1, 6031, 1958, 6649, 4067, 5775, 3602, 5775, 4324, 7451, 571, 7451}},
  {32771, {1, 9050, 9802, 1859, 5975, 11020, 2564, 10779, 2292, 2292, 2292, 2292}},
  {65537, {1, 25016, 25337, 30045, 3589, 19732, 26169, 18482, 30013, 12269, 12269, 28988}},
  {131101, {1, 29671, 40710, 54510, 8971, 30361, 60720, 30361, 30361, 30361, 30361, 30361}},
  {262147, {1, 122794, 100719, 81403, 122794, 23456, 120035, 120035, 8280, 120035, 120035, 120035}},
  {524309, {1, 80027, 46913, 256635, 11039, 22077, 107622, 168331, 240078, 240078, 13799, 22077}},
  {1048583, {1, 126935, 435989, 402876, 402876, 402876, 160048, 364244, 364244, 364244, 364244, 60709}},
  {2097169, {1, 143492, 77265, 33115, 298020, 430472, 99341, 33115, 916131, 916131, 916131, 916131}},
};

} // namespace pmlm::detail
