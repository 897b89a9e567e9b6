#pragma once

#include <string>
#include <vector>

#include "ccil/config.hpp"

namespace ccil {

struct Recipe {
  std::string name;
  std::vector<ExperimentConfig> runs;  // executed in order
};

std::vector<std::string> recipe_names();

// Baseline configurations the recipes expand from.
ExperimentConfig desk_config();      // synthetic 20-class / 5-superclass benchmark
ExperimentConfig cifar100_config();  // paper protocol defaults (path filled by caller)

// Pure expansion of a canned study into concrete run configs. `base` supplies
// dataset / output overrides; `seeds` replicates each row.
Recipe expand_recipe(const std::string& name, const ExperimentConfig& base,
                     const std::vector<std::uint64_t>& seeds, const std::string& out_dir);

}  // namespace ccil
