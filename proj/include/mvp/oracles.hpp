#pragma once

// Independent reference computations for the alignment metrics. These share
// no code with alignment.cpp; the verification tooling and tests compare the
// production paths against them.

#include "mvp/alignment.hpp"

namespace mvp::oracle {

/// Largest sequence length the exhaustive enumeration accepts.
inline constexpr std::size_t kMaxBruteForceLen = 8;

/// Minimum normalized cost over every admissible OTAM path, found by
/// depth-first enumeration of the move rules. Throws ContractError when
/// either side exceeds kMaxBruteForceLen or the matrix is empty.
Real otam_bruteforce(const CostMatrix& cost);

/// Bi-MHM from two separate loop nests (row minima, then column minima).
Real bimhm_two_loop(const CostMatrix& cost);

}  // namespace mvp::oracle
