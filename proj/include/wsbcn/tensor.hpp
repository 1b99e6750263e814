#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "wsbcn/errors.hpp"

namespace wsbcn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& shape)
{
	Index n = 1;
	for (Index d : shape) n *= d;
	return n;
}

inline std::string shape_str(const Shape& shape)
{
	std::ostringstream os;
	os << '(';
	for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
	os << ')';
	return os.str();
}

template <typename Scalar>
using RowMajorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense N-d array in row-major (NCHW for activations) layout with an optional
/// gradient buffer of the same shape.
template <typename Scalar_>
class Tensor {
public:
	using Scalar = Scalar_;
	using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
	using MatrixMap = Eigen::Map<RowMajorMatrix<Scalar>>;
	using ConstMatrixMap = Eigen::Map<const RowMajorMatrix<Scalar>>;

	Tensor() = default;

	explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape))
	{
		check_shape();
		data_ = Storage::Constant(shape_numel(shape_), fill);
	}

	Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data))
	{
		check_shape();
		if (shape_numel(shape_) != data_.size())
			throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
			                 shape_str(shape_));
	}

	Tensor(Shape shape, std::initializer_list<Scalar> values) : shape_(std::move(shape))
	{
		check_shape();
		if (shape_numel(shape_) != static_cast<Index>(values.size()))
			throw ShapeError("initializer length does not match shape " + shape_str(shape_));
		data_.resize(static_cast<Index>(values.size()));
		Index i = 0;
		for (Scalar v : values) data_[i++] = v;
	}

	static Tensor zeros(Shape shape) { return Tensor(std::move(shape), Scalar(0)); }
	static Tensor ones(Shape shape) { return Tensor(std::move(shape), Scalar(1)); }

	const Shape& shape() const { return shape_; }
	int rank() const { return static_cast<int>(shape_.size()); }
	Index dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
	Index size() const { return data_.size(); }
	bool empty() const { return data_.size() == 0; }

	Storage& data() { return data_; }
	const Storage& data() const { return data_; }
	Scalar* ptr() { return data_.data(); }
	const Scalar* ptr() const { return data_.data(); }
	Scalar& operator[](Index i) { return data_[i]; }
	Scalar operator[](Index i) const { return data_[i]; }

	/// Leading dimension as rows, everything else flattened into columns. A
	/// convolution weight [O,Cin,kh,kw] becomes the O x I matrix.
	Index rows() const { return shape_.empty() ? 1 : shape_[0]; }
	Index cols() const { return rows() == 0 ? 0 : size() / rows(); }
	MatrixMap matrix() { return MatrixMap(data_.data(), rows(), cols()); }
	ConstMatrixMap matrix() const { return ConstMatrixMap(data_.data(), rows(), cols()); }

	bool requires_grad() const { return requires_grad_; }
	void set_requires_grad(bool on) { requires_grad_ = on; }

	bool has_grad() const { return grad_.size() == data_.size() && data_.size() > 0; }
	const Storage& grad() const
	{
		if (!has_grad()) throw StateError("tensor has no gradient");
		return grad_;
	}
	/// Mutable gradient; allocated as zeros on first access.
	Storage& grad_mut()
	{
		if (!has_grad()) grad_ = Storage::Zero(data_.size());
		return grad_;
	}
	void zero_grad()
	{
		if (has_grad()) grad_.setZero();
	}
	void clear_grad() { grad_.resize(0); }

	Tensor reshaped(Shape shape) const
	{
		if (shape_numel(shape) != size())
			throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
		return Tensor(std::move(shape), data_);
	}

	bool all_finite() const { return data_.isFinite().all(); }

	template <typename Other>
	Tensor<Other> cast() const
	{
		return Tensor<Other>(shape_, data_.template cast<Other>());
	}

private:
	void check_shape() const
	{
		for (Index d : shape_)
			if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
	}

	Shape shape_;
	Storage data_;
	bool requires_grad_ = false;
	Storage grad_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

} // namespace wsbcn
