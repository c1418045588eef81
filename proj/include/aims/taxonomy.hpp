#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace aims {

// The fixed AIMS label hierarchy: 4 coarse-level poses, 12 fine-level poses,
// and the fine -> coarse parent map. Labels are stored as stable small-integer
// indices (coarse 0-3, fine 0-11) in table row order; confusion matrices and
// serialized files all use this ordering. Immutable after construction.
class Taxonomy {
 public:
  static constexpr int kNumCoarse = 4;
  static constexpr int kNumFine = 12;

  Taxonomy(std::vector<std::string> coarse, std::vector<std::string> fine,
           std::vector<int> parent);

  // Built-in hierarchy: Prone{ProneLying, ForearmSupport, ReciprocalCrawling,
  // FourPointKneeing}, Supine{SupineLying, HandsToKneeFeet, Rolling},
  // Sitting{SittingWithSupport, SittingWithArmSupport, SittingWithoutSupport},
  // Standing{FourPointStanding, Standing}.
  static const Taxonomy& aims();

  const std::vector<std::string>& coarse_labels() const { return coarse_; }
  const std::vector<std::string>& fine_labels() const { return fine_; }

  int coarse_of(int fine) const;
  int coarse_of(const std::string& fine) const;
  bool same_coarse(int fine_a, int fine_b) const;
  bool same_coarse(const std::string& a, const std::string& b) const;

  // Index lookups; throw naming the offending identifier when unknown.
  int fine_index(const std::string& name) const;
  int coarse_index(const std::string& name) const;

  std::vector<int> children(int coarse) const;

  nlohmann::json to_json() const;
  static Taxonomy from_json(const nlohmann::json& j);
  static Taxonomy load(const std::string& path);

 private:
  void validate() const;

  std::vector<std::string> coarse_;
  std::vector<std::string> fine_;
  std::vector<int> parent_;  // fine index -> coarse index
};

}  // namespace aims
