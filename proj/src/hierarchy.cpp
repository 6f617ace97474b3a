// SPDX-License-Identifier: Apache-2.0
#include "ccrt/hierarchy.hpp"

#include <fstream>
#include <set>

#include "ccrt/errors.hpp"

namespace ccrt::hier {

std::string to_string(EntitySource s) {
  switch (s) {
    case EntitySource::kInitial: return "initial";
    case EntitySource::kCrossover: return "crossover";
    case EntitySource::kMutation: return "mutation";
    case EntitySource::kFuzzing: return "fuzzing";
  }
  return "initial";
}

std::size_t Hierarchy::edge_count() const {
  std::size_t n = 0;
  for (int p : parent_)
    if (p >= 0) ++n;
  return n;
}

std::optional<int> Hierarchy::find(const std::string& label) const {
  auto it = index_.find(label);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<int> Hierarchy::parent(int node) const {
  int p = parent_.at(static_cast<std::size_t>(node));
  if (p < 0) return std::nullopt;
  return p;
}

std::optional<int> Hierarchy::resolve(const Entity& e) const {
  if (e.node_id) {
    if (*e.node_id >= 0 && static_cast<std::size_t>(*e.node_id) < labels_.size())
      return e.node_id;
    return std::nullopt;
  }
  return find(e.label);
}

int Hierarchy::add_node(const std::string& label) {
  auto it = index_.find(label);
  if (it != index_.end()) return it->second;
  int id = static_cast<int>(labels_.size());
  labels_.push_back(label);
  parent_.push_back(-1);
  index_.emplace(label, id);
  return id;
}

void Hierarchy::add_edge(const std::string& child, const std::string& parent) {
  int c = add_node(child);
  int p = add_node(parent);
  if (parent_[static_cast<std::size_t>(c)] == p) return;  // duplicate edge
  if (parent_[static_cast<std::size_t>(c)] >= 0)
    throw FormatError("node '" + child + "' already has a parent");
  // Walk up from the proposed parent; reaching the child means a cycle.
  for (int cur = p; cur >= 0; cur = parent_[static_cast<std::size_t>(cur)]) {
    if (cur == c) throw FormatError("cycle detected through '" + child + "'");
  }
  parent_[static_cast<std::size_t>(c)] = p;
}

void Hierarchy::dump(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw InputError("cannot write hierarchy file " + file.string());
  for (std::size_t c = 0; c < parent_.size(); ++c) {
    if (parent_[c] >= 0)
      out << labels_[c] << '\t' << labels_[static_cast<std::size_t>(parent_[c])] << '\n';
  }
}

Hierarchy load_hierarchy(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw NotFoundError("hierarchy file not found: " + file.string());

  Hierarchy h;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size() ||
        line.find('\t', tab + 1) != std::string::npos) {
      throw FormatError(file.string() + ":" + std::to_string(line_no) +
                        ": expected 'child<TAB>parent'");
    }
    try {
      h.add_edge(line.substr(0, tab), line.substr(tab + 1));
    } catch (const FormatError& e) {
      throw FormatError(file.string() + ":" + std::to_string(line_no) + ": " +
                        e.what());
    }
  }
  return h;
}

std::optional<int> shared_parent(const Hierarchy& h, const Entity& a,
                                 const Entity& b, bool generalized_lca) {
  std::optional<int> na = h.resolve(a);
  std::optional<int> nb = h.resolve(b);
  if (!na || !nb) return std::nullopt;

  if (!generalized_lca) {
    std::optional<int> pa = h.parent(*na);
    std::optional<int> pb = h.parent(*nb);
    if (pa && pb && *pa == *pb) return pa;
    return std::nullopt;
  }

  std::set<int> ancestors;
  for (auto cur = h.parent(*na); cur; cur = h.parent(*cur)) ancestors.insert(*cur);
  for (auto cur = h.parent(*nb); cur; cur = h.parent(*cur)) {
    if (ancestors.count(*cur)) return cur;
  }
  return std::nullopt;
}

}  // namespace ccrt::hier
