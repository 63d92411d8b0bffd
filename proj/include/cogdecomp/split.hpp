#pragma once

// Subject-level, class-stratified train/test partitioning.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cogdecomp/error.hpp"
#include "cogdecomp/random.hpp"

namespace cogdecomp {

struct SubjectRecord {
  std::string subject_id;
  std::string label;
};

struct SubjectSplit {
  std::vector<std::string> train;  // manifest order
  std::vector<std::string> test;
};

/// Splits subjects so that round-half-up(train_frac * n) land in train.
/// Per-class train counts follow largest-remainder apportionment (ties to the
/// earlier class). A class with two or more subjects keeps at least one
/// subject on each side unless the total can only be met by filling it.
inline SubjectSplit subject_split(std::span<const SubjectRecord> subjects, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw Error(Errc::InvalidArgument, "train fraction must be in (0, 1)");
  if (subjects.size() < 2) throw Error(Errc::TooFewSubjects, "need at least two subjects");

  std::vector<std::string> classes;
  std::map<std::string, std::vector<std::size_t>> members;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if (!seen.insert(subjects[i].subject_id).second)
      throw Error(Errc::InvalidArgument, "duplicate subject " + subjects[i].subject_id);
    auto [it, inserted] = members.try_emplace(subjects[i].label);
    if (inserted) classes.push_back(subjects[i].label);
    it->second.push_back(i);
  }

  const auto n = static_cast<double>(subjects.size());
  const auto target_total = static_cast<std::size_t>(std::floor(train_frac * n + 0.5 + 1e-9));

  // Each class with two or more subjects keeps one on each side.
  auto upper = [&](std::size_t c) {
    const std::size_t size = members[classes[c]].size();
    return size >= 2 ? size - 1 : size;
  };
  std::vector<std::size_t> quota(classes.size());
  std::vector<double> remainder(classes.size());
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const std::size_t size = members[classes[c]].size();
    const double exact = train_frac * static_cast<double>(size);
    quota[c] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainder[c] = exact - static_cast<double>(quota[c]);
    quota[c] = std::clamp<std::size_t>(quota[c], size >= 2 ? 1 : 0, upper(c));
    assigned += quota[c];
  }
  std::vector<std::size_t> order(classes.size());
  for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b] + 1e-12; });
  for (bool relaxed : {false, true}) {
    for (std::size_t i = 0; assigned < target_total && i < order.size(); ++i) {
      const std::size_t c = order[i];
      if (quota[c] < (relaxed ? members[classes[c]].size() : upper(c))) {
        ++quota[c];
        ++assigned;
      }
    }
  }

  std::vector<bool> in_train(subjects.size(), false);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    auto idx = members[classes[c]];
    Rng rng(derive_seed(seed, "subject-split", c));
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t i = 0; i < quota[c]; ++i) in_train[idx[i]] = true;
  }

  SubjectSplit out;
  for (std::size_t i = 0; i < subjects.size(); ++i)
    (in_train[i] ? out.train : out.test).push_back(subjects[i].subject_id);
  if (out.train.empty() || out.test.empty())
    throw Error(Errc::TooFewSubjects, "split leaves one side empty");
  return out;
}

}  // namespace cogdecomp
