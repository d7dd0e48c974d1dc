#pragma once

#include <filesystem>
#include <string>

#include "iql/mdp.hpp"
#include "iql/oracle.hpp"

namespace iql {

/// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double value);

/// CSV with header `state,row,col,value`, one line per state in index
/// order; wall cells are not states and therefore never appear. Requires a
/// grid-structured MDP.
void emit_heatmap(const ValueTable& values, const TabularMdp& mdp,
                  const std::filesystem::path& path);

/// Parse a heatmap CSV back into a ValueTable (used for stability checks).
ValueTable read_heatmap(const std::filesystem::path& path, int n_states);

/// Per-action variant: header `state,row,col,action,value`, one line per
/// (state, action) in index order.
void emit_q_heatmap(const QTable& q, const TabularMdp& mdp,
                    const std::filesystem::path& path);

}  // namespace iql
