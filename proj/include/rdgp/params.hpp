#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rdgp/autodiff.hpp"

// Flat trainable-parameter vector with constraint transforms.  Optimisation
// always runs on the unconstrained raw values; models read constrained
// values through an EvalCtx so that gradients flow back to the raw vector.

namespace rdgp {

enum class Transform {
  Identity,
  Softplus,          // strictly positive
  SoftplusShift,     // shift + softplus(raw)
  TrilSoftplusDiag,  // lower-triangular factor with softplus on the diagonal
};

// must match the elementwise softplus of the autodiff graph bit-for-bit
inline double softplus_forward(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

// Inverse refined so that softplus_forward(raw) reproduces y bit-exactly when
// a representable raw exists; identity variational states then give an exact
// zero KL and exact prior reproduction.
inline double softplus_inverse(double y) {
  if (y <= 0.0) throw std::invalid_argument("softplus_inverse: value must be positive");
  if (y > 30.0) return y;
  double r = std::log(std::expm1(y));
  if (softplus_forward(r) == y) return r;
  for (double dir : {HUGE_VAL, -HUGE_VAL}) {
    double cand = r;
    for (int step = 0; step < 4; ++step) {
      cand = std::nextafter(cand, dir);
      if (softplus_forward(cand) == y) return cand;
    }
  }
  return r;
}

struct ParamSlot {
  std::string name;
  int offset = 0;
  int raw_size = 0;
  int rows = 0, cols = 0;  // shape of the transformed value
  Transform tf = Transform::Identity;
  double shift = 0.0;
  bool trainable = true;
};

class ParameterStore {
 public:
  int add_scalar(const std::string& name, Transform tf, double init_value,
                 double shift = 0.0) {
    int id = add_slot(name, 1, 1, 1, tf, shift);
    set_scalar(id, init_value);
    return id;
  }

  int add_vector(const std::string& name, int n, Transform tf, double init_value) {
    int id = add_slot(name, n, n, 1, tf, 0.0);
    for (int i = 0; i < n; ++i) raw_[slots_[id].offset + i] = raw_from_value(slots_[id], init_value);
    return id;
  }

  // lower-triangular factor, initialised to the identity matrix
  int add_tril(const std::string& name, int n) {
    int id = add_slot(name, n * (n + 1) / 2, n, n, Transform::TrilSoftplusDiag, 0.0);
    const auto& s = slots_[id];
    int at = 0;
    for (int j = 0; j < n; ++j)
      for (int i = j; i < n; ++i)
        raw_[s.offset + at++] = (i == j) ? softplus_inverse(1.0) : 0.0;
    return id;
  }

  void set_scalar(int slot, double value) {
    const auto& s = slots_[slot];
    raw_[s.offset] = raw_from_value(s, value);
  }

  double scalar_value(int slot) const {
    const auto& s = slots_[slot];
    return value_from_raw(s, raw_[s.offset]);
  }

  const ParamSlot& slot(int id) const { return slots_[id]; }
  int num_slots() const { return static_cast<int>(slots_.size()); }

  int find_slot(const std::string& name) const {
    for (std::size_t i = 0; i < slots_.size(); ++i)
      if (slots_[i].name == name) return static_cast<int>(i);
    return -1;
  }
  int size() const { return static_cast<int>(raw_.size()); }

  Eigen::VectorXd& raw() { return raw_vec_update(); }
  const Eigen::VectorXd& raw() const { return raw_view(); }
  void set_raw(const Eigen::VectorXd& v) {
    if (v.size() != static_cast<Eigen::Index>(raw_.size()))
      throw std::invalid_argument("ParameterStore: raw size mismatch");
    for (int i = 0; i < v.size(); ++i) raw_[i] = v(i);
  }

  void set_trainable(int slot, bool flag) { slots_[slot].trainable = flag; }

  // mask over the flat raw vector: 1 for trainable coordinates
  Eigen::VectorXd trainable_mask() const {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(size());
    for (const auto& s : slots_)
      if (s.trainable) m.segment(s.offset, s.raw_size).setOnes();
    return m;
  }

  // name of the slot owning flat coordinate i
  const std::string& name_of(int flat_index) const {
    for (const auto& s : slots_)
      if (flat_index >= s.offset && flat_index < s.offset + s.raw_size) return s.name;
    throw std::out_of_range("ParameterStore: flat index out of range");
  }

  Eigen::MatrixXd raw_block(int slot) const {
    const auto& s = slots_[slot];
    Eigen::MatrixXd m(s.raw_size, 1);
    for (int i = 0; i < s.raw_size; ++i) m(i, 0) = raw_[s.offset + i];
    return m;
  }

 private:
  static double raw_from_value(const ParamSlot& s, double value) {
    switch (s.tf) {
      case Transform::Identity: return value;
      case Transform::Softplus: return softplus_inverse(value);
      case Transform::SoftplusShift: return softplus_inverse(value - s.shift);
      case Transform::TrilSoftplusDiag:
        throw std::logic_error("ParameterStore: scalar init on triangular slot");
    }
    return value;
  }
  static double value_from_raw(const ParamSlot& s, double raw) {
    switch (s.tf) {
      case Transform::Identity: return raw;
      case Transform::Softplus: return softplus_forward(raw);
      case Transform::SoftplusShift: return s.shift + softplus_forward(raw);
      case Transform::TrilSoftplusDiag:
        throw std::logic_error("ParameterStore: scalar read on triangular slot");
    }
    return raw;
  }

  int add_slot(const std::string& name, int raw_size, int rows, int cols, Transform tf,
               double shift) {
    ParamSlot s;
    s.name = name;
    s.offset = static_cast<int>(raw_.size());
    s.raw_size = raw_size;
    s.rows = rows;
    s.cols = cols;
    s.tf = tf;
    s.shift = shift;
    raw_.resize(raw_.size() + raw_size, 0.0);
    slots_.push_back(s);
    return static_cast<int>(slots_.size()) - 1;
  }

  Eigen::VectorXd& raw_vec_update() {
    raw_eigen_.resize(raw_.size());
    for (std::size_t i = 0; i < raw_.size(); ++i) raw_eigen_(i) = raw_[i];
    return raw_eigen_;
  }
  const Eigen::VectorXd& raw_view() const {
    raw_eigen_.resize(raw_.size());
    for (std::size_t i = 0; i < raw_.size(); ++i) raw_eigen_(i) = raw_[i];
    return raw_eigen_;
  }

  friend class EvalCtx;
  std::vector<double> raw_;
  std::vector<ParamSlot> slots_;
  mutable Eigen::VectorXd raw_eigen_;
};

// One evaluation pass: creates at most one leaf per slot, so adjoints can be
// gathered back into a flat gradient after backward().
class EvalCtx {
 public:
  EvalCtx(ag::Tape* tape, const ParameterStore& store) : tape_(tape), store_(&store) {}

  ag::Tape* tape() const { return tape_; }
  const ParameterStore& store() const { return *store_; }
  bool tracked() const { return tape_ != nullptr; }

  ag::Mat raw(int slot) {
    auto it = leaves_.find(slot);
    if (it != leaves_.end()) return it->second;
    Eigen::MatrixXd v = store_->raw_block(slot);
    ag::Mat leaf = tape_ ? tape_->leaf(std::move(v)) : ag::Mat::constant(std::move(v));
    leaves_.emplace(slot, leaf);
    return leaf;
  }

  // constrained value of the slot as a graph node
  ag::Mat param(int slot) {
    const ParamSlot& s = store_->slot(slot);
    ag::Mat r = raw(slot);
    switch (s.tf) {
      case Transform::Identity:
        return r;
      case Transform::Softplus:
        return ag::softplus(r);
      case Transform::SoftplusShift:
        return ag::softplus(r) + s.shift;
      case Transform::TrilSoftplusDiag: {
        ag::Mat l = ag::tril_from_packed(r, s.rows);
        ag::Mat d = ag::diagvec(l);
        return l - ag::diagmat(d) + ag::diagmat(ag::softplus(d));
      }
    }
    throw std::logic_error("EvalCtx: unknown transform");
  }

  // flat gradient after tape->backward(); coordinates of untouched slots are 0
  Eigen::VectorXd gather_gradient() const {
    if (!tape_) throw std::logic_error("EvalCtx: gradient without tape");
    Eigen::VectorXd g = Eigen::VectorXd::Zero(store_->size());
    for (const auto& [slot, leaf] : leaves_) {
      const ParamSlot& s = store_->slot(slot);
      Eigen::MatrixXd a = tape_->adjoint(leaf);
      g.segment(s.offset, s.raw_size) = Eigen::Map<const Eigen::VectorXd>(a.data(), s.raw_size);
    }
    return g;
  }

 private:
  ag::Tape* tape_;
  const ParameterStore* store_;
  std::map<int, ag::Mat> leaves_;
};

}  // namespace rdgp
