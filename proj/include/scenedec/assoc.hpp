#pragma once

#include "scenedec/tensor.hpp"

namespace scenedec::assoc {

// Cosine similarity between two slot sets of codes. a (N,D) holds the target
// view's codes, b (M,D) the source view's. Only the first `dims` components
// enter the comparison (0 means all of D). out[i,j] = <a_i,b_j>/(|a_i||b_j|).
// A code whose compared part has near-zero norm is an error.
ad::Tensor similarity(const ad::Tensor& a, const ad::Tensor& b, std::size_t dims = 0);

// Row-stochastic assignment: softmax over each row of beta*m. Row i weights
// the source slots used to rebuild target slot i.
ad::Tensor soft_assignment(const ad::Tensor& m, double beta);

// Weighted reorder of source items into target slot order: assignment (N,M)
// times items (M,d).
ad::Tensor reorder(const ad::Tensor& assignment, const ad::Tensor& items);

}  // namespace scenedec::assoc
