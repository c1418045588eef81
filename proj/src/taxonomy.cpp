#include "aims/taxonomy.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

namespace aims {

Taxonomy::Taxonomy(std::vector<std::string> coarse, std::vector<std::string> fine,
                   std::vector<int> parent)
    : coarse_(std::move(coarse)), fine_(std::move(fine)), parent_(std::move(parent)) {
  validate();
}

void Taxonomy::validate() const {
  if (static_cast<int>(coarse_.size()) != kNumCoarse)
    throw std::invalid_argument("taxonomy: expected 4 coarse labels, got " +
                                std::to_string(coarse_.size()));
  if (static_cast<int>(fine_.size()) != kNumFine)
    throw std::invalid_argument("taxonomy: expected 12 fine labels, got " +
                                std::to_string(fine_.size()));
  if (parent_.size() != fine_.size())
    throw std::invalid_argument("taxonomy: parent map must cover every fine label");

  const std::set<std::string> coarse_names(coarse_.begin(), coarse_.end());
  if (static_cast<int>(coarse_names.size()) != kNumCoarse)
    throw std::invalid_argument("taxonomy: duplicate coarse label");
  const std::set<std::string> fine_names(fine_.begin(), fine_.end());
  if (static_cast<int>(fine_names.size()) != kNumFine)
    throw std::invalid_argument("taxonomy: duplicate fine label");

  std::vector<int> child_count(kNumCoarse, 0);
  for (int p : parent_) {
    if (p < 0 || p >= kNumCoarse)
      throw std::invalid_argument("taxonomy: parent index out of range: " +
                                  std::to_string(p));
    ++child_count[p];
  }
  // Table row order pins the per-parent child counts.
  const std::vector<int> expected = {4, 3, 3, 2};
  if (child_count != expected) {
    std::string got;
    for (int c : child_count) got += std::to_string(c) + " ";
    throw std::invalid_argument("taxonomy: child counts must be {4,3,3,2}, got " + got);
  }
}

const Taxonomy& Taxonomy::aims() {
  static const Taxonomy t(
      {"Prone", "Supine", "Sitting", "Standing"},
      {"ProneLying", "ForearmSupport", "ReciprocalCrawling", "FourPointKneeing",
       "SupineLying", "HandsToKneeFeet", "Rolling",
       "SittingWithSupport", "SittingWithArmSupport", "SittingWithoutSupport",
       "FourPointStanding", "Standing"},
      {0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3});
  return t;
}

int Taxonomy::coarse_of(int fine) const {
  if (fine < 0 || fine >= kNumFine)
    throw std::invalid_argument("taxonomy: unknown fine label index " +
                                std::to_string(fine));
  return parent_[fine];
}

int Taxonomy::coarse_of(const std::string& fine) const {
  return parent_[fine_index(fine)];
}

bool Taxonomy::same_coarse(int fine_a, int fine_b) const {
  return coarse_of(fine_a) == coarse_of(fine_b);
}

bool Taxonomy::same_coarse(const std::string& a, const std::string& b) const {
  return coarse_of(a) == coarse_of(b);
}

int Taxonomy::fine_index(const std::string& name) const {
  auto it = std::find(fine_.begin(), fine_.end(), name);
  if (it == fine_.end())
    throw std::invalid_argument("taxonomy: unknown fine label '" + name + "'");
  return static_cast<int>(it - fine_.begin());
}

int Taxonomy::coarse_index(const std::string& name) const {
  auto it = std::find(coarse_.begin(), coarse_.end(), name);
  if (it == coarse_.end())
    throw std::invalid_argument("taxonomy: unknown coarse label '" + name + "'");
  return static_cast<int>(it - coarse_.begin());
}

std::vector<int> Taxonomy::children(int coarse) const {
  if (coarse < 0 || coarse >= kNumCoarse)
    throw std::invalid_argument("taxonomy: unknown coarse label index " +
                                std::to_string(coarse));
  std::vector<int> out;
  for (int f = 0; f < kNumFine; ++f)
    if (parent_[f] == coarse) out.push_back(f);
  return out;
}

nlohmann::json Taxonomy::to_json() const {
  nlohmann::json parent = nlohmann::json::object();
  for (int f = 0; f < kNumFine; ++f) parent[fine_[f]] = coarse_[parent_[f]];
  return {{"coarse", coarse_}, {"fine", fine_}, {"parent", parent}};
}

Taxonomy Taxonomy::from_json(const nlohmann::json& j) {
  if (!j.contains("coarse") || !j.contains("fine") || !j.contains("parent"))
    throw std::invalid_argument("taxonomy: file must have coarse, fine, parent keys");
  std::vector<std::string> coarse = j.at("coarse").get<std::vector<std::string>>();
  std::vector<std::string> fine = j.at("fine").get<std::vector<std::string>>();
  std::vector<int> parent;
  for (const auto& f : fine) {
    if (!j.at("parent").contains(f))
      throw std::invalid_argument("taxonomy: fine label '" + f + "' has no parent");
    std::string p = j.at("parent").at(f).get<std::string>();
    auto it = std::find(coarse.begin(), coarse.end(), p);
    if (it == coarse.end())
      throw std::invalid_argument("taxonomy: parent '" + p + "' of '" + f +
                                  "' is not a coarse label");
    parent.push_back(static_cast<int>(it - coarse.begin()));
  }
  return Taxonomy(std::move(coarse), std::move(fine), std::move(parent));
}

Taxonomy Taxonomy::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("taxonomy: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

}  // namespace aims
