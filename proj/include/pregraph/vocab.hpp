#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pregraph/error.hpp"

namespace pregraph {

enum class Domain { molecule, protein };

inline std::string to_string(Domain d) { return d == Domain::molecule ? "molecule" : "protein"; }

inline Domain parse_domain(const std::string& s) {
  if (s == "molecule") return Domain::molecule;
  if (s == "protein") return Domain::protein;
  throw InvalidArgument("unknown domain '" + s + "'");
}

/// Category counts per attribute slot.
///
/// Layout convention shared by every domain: a node slot is `real..., mask`;
/// an edge slot is `real..., self_loop, mask`. Reserved categories always sit
/// at the end so real categories keep their natural indices.
struct Vocab {
  std::vector<int> node_slots;
  std::vector<int> edge_slots;

  int node_mask(std::size_t slot) const { return node_slots.at(slot) - 1; }
  int node_real(std::size_t slot) const { return node_slots.at(slot) - 1; }
  int edge_self_loop(std::size_t slot) const { return edge_slots.at(slot) - 2; }
  int edge_mask(std::size_t slot) const { return edge_slots.at(slot) - 1; }
  int edge_real(std::size_t slot) const { return edge_slots.at(slot) - 2; }

  friend bool operator==(const Vocab&, const Vocab&) = default;
};

namespace molecule {

// Node slot 0: atomic number Z stored as Z-1 (0..117), mask at 118.
inline constexpr int kAtomCategories = 118;
inline constexpr int kAtomMask = 118;

// Node slot 1: chirality tag.
inline constexpr int kChiralUnspecified = 0;
inline constexpr int kChiralCW = 1;
inline constexpr int kChiralCCW = 2;
inline constexpr int kChiralOther = 3;
inline constexpr int kChiralMask = 4;

// Edge slot 0: bond type.
inline constexpr int kBondSingle = 0;
inline constexpr int kBondDouble = 1;
inline constexpr int kBondTriple = 2;
inline constexpr int kBondAromatic = 3;
inline constexpr int kBondSelfLoop = 4;
inline constexpr int kBondMask = 5;

// Edge slot 1: bond direction.
inline constexpr int kDirNone = 0;
inline constexpr int kDirEndUpRight = 1;
inline constexpr int kDirEndDownRight = 2;
inline constexpr int kDirSelfLoop = 3;
inline constexpr int kDirMask = 4;

inline int atom_index(int atomic_number) { return atomic_number - 1; }
inline int atomic_number(int atom_index) { return atom_index + 1; }

}  // namespace molecule

namespace protein {

// 7 binary relation channels per edge, each stored as its own slot
// {0 = absent, 1 = present, 2 = self-loop, 3 = mask}.
inline constexpr int kRelations = 7;
// Dense edge-feature width: 7 relation bits + self-loop bit + mask bit.
inline constexpr int kEdgeFeatureWidth = kRelations + 2;
inline constexpr int kSelfLoopBit = kRelations;
inline constexpr int kMaskBit = kRelations + 1;

inline constexpr int kSlotCategories = 4;
inline constexpr int kSlotSelfLoop = 2;
inline constexpr int kSlotMask = 3;

}  // namespace protein

inline Vocab molecule_vocab() {
  return Vocab{{molecule::kAtomCategories + 1, 5}, {6, 5}};
}

inline Vocab protein_vocab() {
  return Vocab{{2}, std::vector<int>(protein::kRelations, protein::kSlotCategories)};
}

inline Vocab vocab_for(Domain d) { return d == Domain::molecule ? molecule_vocab() : protein_vocab(); }

}  // namespace pregraph
