#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "optalloc/estimate.hpp"

namespace optalloc::cli {

// Column layouts:
//   trial           w1,w2,a,y,p_assign
//   target          w1,w2
//   generalization  w1,w2,z,a,y,p_assign   (a, y, p_assign blank when z = 0)
//   weights         stratum_id,tau_star     (ids 1..K)
// Columns may appear in any order; lines starting with '#' are comments.
// Every error is a DataError naming the file and line.
est::TrialDataset load_trial_csv(const std::filesystem::path& path);
est::TargetCohort load_target_csv(const std::filesystem::path& path);
est::GeneralizationCohort load_generalization_csv(const std::filesystem::path& path);
std::vector<double> load_weights_csv(const std::filesystem::path& path);

// Writers emit `comments` as leading '#' lines and values with %.17g, so a
// written dataset reloads bit-for-bit.
void write_trial_csv(const std::filesystem::path& path, const est::TrialDataset& data,
                     const std::vector<std::string>& comments = {});
void write_target_csv(const std::filesystem::path& path, const est::TargetCohort& data,
                      const std::vector<std::string>& comments = {});
void write_generalization_csv(const std::filesystem::path& path, const est::GeneralizationCohort& data,
                              const std::vector<std::string>& comments = {});
void write_weights_csv(const std::filesystem::path& path, const std::vector<double>& weights,
                       const std::vector<std::string>& comments = {});

// %.17g
std::string format_double(double x);

}  // namespace optalloc::cli
