#include "scenedec/assoc.hpp"

#include <cmath>

namespace scenedec::assoc {

using ad::Tensor;

namespace {

// Row-normalize (N,d) to unit length.
Tensor normalize_rows(const Tensor& m, const char* which) {
  std::vector<Tensor> rows;
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    const Tensor row = ad::narrow(m, 0, i, 1);
    const Tensor nrm = ad::sqrt(ad::reduce_sum(ad::square(row)));
    check(nrm.item() > 1e-12, std::string(which) + " code " + std::to_string(i) +
                                  " has near-zero norm in the compared dimensions");
    rows.push_back(ad::scale_by(row, ad::divide(Tensor::scalar(1.0), nrm)));
  }
  return ad::stack_rows(rows);
}

}  // namespace

Tensor similarity(const Tensor& a, const Tensor& b, std::size_t dims) {
  check(a.rank() == 2 && b.rank() == 2, "similarity expects rank-2 code sets, got " +
                                            ad::shape_str(a.shape()) + " and " +
                                            ad::shape_str(b.shape()));
  check(a.dim(1) == b.dim(1), "similarity code widths differ: " +
                                  ad::shape_str(a.shape()) + " vs " +
                                  ad::shape_str(b.shape()));
  check(dims <= a.dim(1), "similarity dims " + std::to_string(dims) +
                              " exceeds code width " + std::to_string(a.dim(1)));
  const Tensor pa = dims > 0 && dims < a.dim(1) ? ad::narrow(a, 1, 0, dims) : a;
  const Tensor pb = dims > 0 && dims < b.dim(1) ? ad::narrow(b, 1, 0, dims) : b;
  return ad::matmul_nt(normalize_rows(pa, "target"), normalize_rows(pb, "source"));
}

Tensor soft_assignment(const Tensor& m, double beta) {
  check(beta > 0.0, "soft_assignment temperature must be positive");
  return ad::softmax_rows(m, beta);
}

Tensor reorder(const Tensor& assignment, const Tensor& items) {
  check(assignment.rank() == 2 && items.rank() == 2,
        "reorder expects rank-2 inputs, got " + ad::shape_str(assignment.shape()) +
            " and " + ad::shape_str(items.shape()));
  check(assignment.dim(1) == items.dim(0),
        "reorder: assignment " + ad::shape_str(assignment.shape()) +
            " does not match items " + ad::shape_str(items.shape()));
  return ad::matmul(assignment, items);
}

}  // namespace scenedec::assoc
