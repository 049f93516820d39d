// Flat parameter storage with a named group layout. Learning code addresses
// parameters by group name and matrix shape; optimizers and the implicit
// gradient machinery see one contiguous vector.
#pragma once

#include <Eigen/Dense>

#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace cdnas {

struct GroupSpec {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index offset = 0;
  Eigen::Index size() const { return rows * cols; }
};

class Layout {
 public:
  int add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    if (index_.count(name)) throw std::invalid_argument("layout: duplicate group " + name);
    GroupSpec g{std::move(name), rows, cols, total_};
    total_ += g.size();
    index_[g.name] = static_cast<int>(groups_.size());
    groups_.push_back(std::move(g));
    return static_cast<int>(groups_.size()) - 1;
  }

  Eigen::Index total_size() const { return total_; }
  const std::vector<GroupSpec>& groups() const { return groups_; }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const GroupSpec& group(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("layout: unknown group " + name);
    return groups_[it->second];
  }

  bool operator==(const Layout& o) const {
    if (groups_.size() != o.groups_.size()) return false;
    for (size_t i = 0; i < groups_.size(); ++i) {
      const auto& a = groups_[i];
      const auto& b = o.groups_[i];
      if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.offset != b.offset)
        return false;
    }
    return true;
  }
  bool operator!=(const Layout& o) const { return !(*this == o); }

 private:
  std::vector<GroupSpec> groups_;
  std::unordered_map<std::string, int> index_;
  Eigen::Index total_ = 0;
};

using LayoutPtr = std::shared_ptr<const Layout>;

template <typename S>
struct ParamVector {
  LayoutPtr layout;
  Eigen::Matrix<S, Eigen::Dynamic, 1> values;

  ParamVector() = default;
  explicit ParamVector(LayoutPtr l)
      : layout(std::move(l)),
        values(Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(layout->total_size())) {}

  Eigen::Index size() const { return values.size(); }

  // Group views into the flat storage (column-major), so flatten/unflatten is
  // the identity by construction.
  Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>> group(const std::string& name) {
    const GroupSpec& g = layout->group(name);
    return {values.data() + g.offset, g.rows, g.cols};
  }
  Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>> group(
      const std::string& name) const {
    const GroupSpec& g = layout->group(name);
    return {values.data() + g.offset, g.rows, g.cols};
  }

  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> group_copy(const std::string& name) const {
    return group(name);
  }

  void set_group(const std::string& name,
                 const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& m) {
    auto view = group(name);
    if (view.rows() != m.rows() || view.cols() != m.cols())
      throw std::invalid_argument("param_vector: shape mismatch for group " + name);
    view = m;
  }

  template <typename T>
  ParamVector<T> cast() const {
    ParamVector<T> out(layout);
    out.values = values.template cast<T>();
    return out;
  }
};

template <typename S>
void check_same_layout(const ParamVector<S>& a, const ParamVector<S>& b, const char* what) {
  if (!a.layout || !b.layout || (a.layout != b.layout && *a.layout != *b.layout))
    throw std::invalid_argument(std::string("param_vector: layout mismatch in ") + what);
}

}  // namespace cdnas
