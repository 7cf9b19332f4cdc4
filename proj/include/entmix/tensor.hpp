#pragma once

//! Dense complex tensor with optionally labeled legs.
//!
//! Storage is row-major over the legs in declared order (last leg fastest);
//! every reshape is explicit and value-preserving. This fixed linearization
//! is relied upon by the serializer and by all matricizations.

#include <complex>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>

namespace entmix {

using cd = std::complex<double>;

class DenseTensor {
 public:
  DenseTensor() = default;

  explicit DenseTensor(std::vector<long> shape, std::vector<std::string> legs = {})
      : shape_(std::move(shape)), legs_(std::move(legs)) {
    for (long d : shape_) {
      if (d <= 0) throw std::invalid_argument("DenseTensor: leg dimensions must be positive");
    }
    if (!legs_.empty() && legs_.size() != shape_.size())
      throw std::invalid_argument("DenseTensor: label count does not match rank");
    data_.assign(static_cast<std::size_t>(element_count(shape_)), cd(0.0, 0.0));
  }

  DenseTensor(std::vector<long> shape, std::vector<cd> data, std::vector<std::string> legs = {})
      : shape_(std::move(shape)), legs_(std::move(legs)), data_(std::move(data)) {
    if (element_count(shape_) != static_cast<long>(data_.size()))
      throw std::invalid_argument(fmt::format(
          "DenseTensor: shape implies {} entries but {} were given",
          element_count(shape_), data_.size()));
    if (!legs_.empty() && legs_.size() != shape_.size())
      throw std::invalid_argument("DenseTensor: label count does not match rank");
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  long size() const { return static_cast<long>(data_.size()); }
  const std::vector<long>& shape() const { return shape_; }
  long dim(int leg) const { return shape_.at(static_cast<std::size_t>(leg)); }
  const std::vector<std::string>& legs() const { return legs_; }

  std::string leg_name(int leg) const {
    if (leg < 0 || leg >= rank()) throw std::out_of_range("leg_name: leg out of range");
    if (legs_.empty()) return fmt::format("#{}", leg);
    return legs_[static_cast<std::size_t>(leg)];
  }
  void set_legs(std::vector<std::string> legs) {
    if (!legs.empty() && legs.size() != shape_.size())
      throw std::invalid_argument("set_legs: label count does not match rank");
    legs_ = std::move(legs);
  }

  cd* data() { return data_.data(); }
  const cd* data() const { return data_.data(); }
  cd& operator[](long i) { return data_[static_cast<std::size_t>(i)]; }
  const cd& operator[](long i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Row-major strides for the current shape.
  std::vector<long> strides() const {
    std::vector<long> s(shape_.size(), 1);
    for (int i = rank() - 2; i >= 0; --i) s[i] = s[i + 1] * shape_[i + 1];
    return s;
  }

  cd& at(const std::vector<long>& idx) { return data_[flat_index(idx)]; }
  const cd& at(const std::vector<long>& idx) const { return data_[flat_index(idx)]; }

  /// Reorder legs: new leg i is old leg perm[i].
  DenseTensor permute(const std::vector<int>& perm) const {
    if (static_cast<int>(perm.size()) != rank())
      throw std::invalid_argument("permute: permutation length does not match rank");
    std::vector<bool> seen(perm.size(), false);
    std::vector<long> new_shape(perm.size());
    std::vector<std::string> new_legs(legs_.empty() ? 0 : perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
      int p = perm[i];
      if (p < 0 || p >= rank() || seen[static_cast<std::size_t>(p)])
        throw std::invalid_argument("permute: not a permutation");
      seen[static_cast<std::size_t>(p)] = true;
      new_shape[i] = shape_[static_cast<std::size_t>(p)];
      if (!legs_.empty()) new_legs[i] = legs_[static_cast<std::size_t>(p)];
    }
    DenseTensor out(new_shape, std::move(new_legs));
    if (data_.empty()) return out;

    const std::vector<long> old_strides = strides();
    std::vector<long> stride_for_new(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i)
      stride_for_new[i] = old_strides[static_cast<std::size_t>(perm[i])];

    // Walk the output in order, tracking the input offset with an odometer.
    const int r = rank();
    std::vector<long> counter(static_cast<std::size_t>(r), 0);
    long src = 0;
    const long n = size();
    for (long dst = 0; dst < n; ++dst) {
      out.data_[static_cast<std::size_t>(dst)] = data_[static_cast<std::size_t>(src)];
      for (int leg = r - 1; leg >= 0; --leg) {
        auto u = static_cast<std::size_t>(leg);
        if (++counter[u] < new_shape[u]) {
          src += stride_for_new[u];
          break;
        }
        counter[u] = 0;
        src -= stride_for_new[u] * (new_shape[u] - 1);
      }
    }
    return out;
  }

  /// Size-preserving reshape; labels are dropped unless new ones are given.
  DenseTensor reshape(std::vector<long> new_shape, std::vector<std::string> legs = {}) const {
    if (element_count(new_shape) != size())
      throw std::invalid_argument(fmt::format(
          "reshape: element count mismatch ({} -> {})", size(), element_count(new_shape)));
    return DenseTensor(std::move(new_shape), data_, std::move(legs));
  }

  DenseTensor conjugate() const {
    DenseTensor out(shape_, legs_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] = std::conj(data_[i]);
    return out;
  }

  double norm() const {
    double s = 0.0;
    for (const cd& v : data_) s += std::norm(v);
    return std::sqrt(s);
  }

  DenseTensor& operator*=(cd a) {
    for (cd& v : data_) v *= a;
    return *this;
  }
  DenseTensor& operator+=(const DenseTensor& o) {
    if (o.shape_ != shape_) throw std::invalid_argument("operator+=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  static long element_count(const std::vector<long>& shape) {
    long n = 1;
    for (long d : shape) n *= d;
    return n;
  }

 private:
  long flat_index(const std::vector<long>& idx) const {
    if (static_cast<int>(idx.size()) != rank())
      throw std::invalid_argument("at: index rank mismatch");
    long flat = 0;
    for (int i = 0; i < rank(); ++i) {
      auto u = static_cast<std::size_t>(i);
      if (idx[u] < 0 || idx[u] >= shape_[u]) throw std::out_of_range("at: index out of range");
      flat = flat * shape_[u] + idx[u];
    }
    return flat;
  }

  std::vector<long> shape_;
  std::vector<std::string> legs_;
  std::vector<cd> data_;
};

/// Gaussian-filled tensor (test inputs, random restarts).
inline DenseTensor random_tensor(const std::vector<long>& shape, std::mt19937_64& rng,
                                 std::vector<std::string> legs = {}) {
  std::normal_distribution<double> g(0.0, 1.0);
  DenseTensor t(shape, std::move(legs));
  for (long i = 0; i < t.size(); ++i) t[i] = cd(g(rng), g(rng));
  return t;
}

namespace detail {
void gemm_row_major(const cd* a, const cd* b, cd* c, long m, long k, long n);
}  // namespace detail

/// Contract legs of `a` against legs of `b` over the given (a-leg, b-leg)
/// pairs. Result legs: unpaired legs of `a` in order, then unpaired legs of
/// `b` in order.
inline DenseTensor contract(const DenseTensor& a, const DenseTensor& b,
                            const std::vector<std::pair<int, int>>& pairs) {
  std::vector<bool> a_used(static_cast<std::size_t>(a.rank()), false);
  std::vector<bool> b_used(static_cast<std::size_t>(b.rank()), false);
  for (const auto& [la, lb] : pairs) {
    if (la < 0 || la >= a.rank() || lb < 0 || lb >= b.rank())
      throw std::invalid_argument("contract: leg index out of range");
    if (a_used[static_cast<std::size_t>(la)] || b_used[static_cast<std::size_t>(lb)])
      throw std::invalid_argument(fmt::format(
          "contract: leg repeated in pairs ({} / {})", a.leg_name(la), b.leg_name(lb)));
    a_used[static_cast<std::size_t>(la)] = true;
    b_used[static_cast<std::size_t>(lb)] = true;
    if (a.dim(la) != b.dim(lb))
      throw std::invalid_argument(fmt::format(
          "contract: dimension mismatch on pair ({}:{} vs {}:{})",
          a.leg_name(la), a.dim(la), b.leg_name(lb), b.dim(lb)));
  }

  // Permute a -> (free..., contracted...) and b -> (contracted..., free...),
  // then one row-major GEMM.
  std::vector<int> a_perm, b_perm;
  std::vector<long> out_shape;
  std::vector<std::string> out_legs;
  const bool labeled = !a.legs().empty() && !b.legs().empty();
  long m = 1, k = 1, n = 1;
  for (int i = 0; i < a.rank(); ++i) {
    if (!a_used[static_cast<std::size_t>(i)]) {
      a_perm.push_back(i);
      out_shape.push_back(a.dim(i));
      if (labeled) out_legs.push_back(a.legs()[static_cast<std::size_t>(i)]);
      m *= a.dim(i);
    }
  }
  for (const auto& [la, lb] : pairs) {
    a_perm.push_back(la);
    k *= a.dim(la);
    (void)lb;
  }
  for (const auto& [la, lb] : pairs) {
    b_perm.push_back(lb);
    (void)la;
  }
  for (int i = 0; i < b.rank(); ++i) {
    if (!b_used[static_cast<std::size_t>(i)]) {
      b_perm.push_back(i);
      out_shape.push_back(b.dim(i));
      if (labeled) out_legs.push_back(b.legs()[static_cast<std::size_t>(i)]);
      n *= b.dim(i);
    }
  }

  const DenseTensor ap = a.permute(a_perm);
  const DenseTensor bp = b.permute(b_perm);
  DenseTensor out(out_shape.empty() ? std::vector<long>{1} : out_shape,
                  labeled ? out_legs : std::vector<std::string>{});
  detail::gemm_row_major(ap.data(), bp.data(), out.data(), m, k, n);
  return out;
}

/// Scalar contraction of a tensor with the conjugate of another (same shape).
inline cd inner(const DenseTensor& a, const DenseTensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("inner: shape mismatch");
  cd s(0.0, 0.0);
  for (long i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
  return s;
}

}  // namespace entmix

#include "entmix/detail/gemm.hpp"
