// SPDX-License-Identifier: Apache-2.0
#pragma once

//
// Entity hierarchy (ImageNet/WordNet-style label forest) and the
// shared-parent query used by crossover Rule 1.
//

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace ccrt::hier {

enum class EntitySource { kInitial, kCrossover, kMutation, kFuzzing };

std::string to_string(EntitySource s);

struct Entity {
  std::string label;
  std::optional<int> node_id;  // present only when the label is in the hierarchy
  EntitySource source = EntitySource::kInitial;
};

/// Immutable after load; safe for unrestricted concurrent reads.
class Hierarchy {
 public:
  Hierarchy() = default;

  std::size_t node_count() const { return labels_.size(); }
  std::size_t edge_count() const;

  std::optional<int> find(const std::string& label) const;
  const std::string& label(int node) const { return labels_.at(static_cast<std::size_t>(node)); }
  /// Parent node, or nullopt for roots.
  std::optional<int> parent(int node) const;

  /// Resolves an entity against the hierarchy (node id wins over label).
  std::optional<int> resolve(const Entity& e) const;

  int add_node(const std::string& label);
  /// child -> parent; duplicate edges collapse, conflicts and cycles throw.
  void add_edge(const std::string& child, const std::string& parent);

  void dump(const std::filesystem::path& file) const;

 private:
  std::vector<std::string> labels_;
  std::vector<int> parent_;  // -1 = root
  std::unordered_map<std::string, int> index_;
};

/// Parses a UTF-8 edge list, one `child<TAB>parent` per line. Blank lines are
/// ignored. Malformed lines and cycles raise FormatError with a line number.
Hierarchy load_hierarchy(const std::filesystem::path& file);

/// Direct-parent query: the node that is the parent of both a and b, if one
/// exists. Entities absent from the hierarchy always yield nullopt. With
/// generalized_lca the query upgrades to lowest common ancestor.
std::optional<int> shared_parent(const Hierarchy& h, const Entity& a,
                                 const Entity& b, bool generalized_lca = false);

}  // namespace ccrt::hier
