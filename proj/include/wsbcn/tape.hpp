#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "wsbcn/errors.hpp"
#include "wsbcn/tensor.hpp"

namespace wsbcn {

template <typename Scalar>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
public:
	Var() = default;
	Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

	Tape<Scalar>& tape() const
	{
		if (!tape_) throw StateError("detached variable");
		return *tape_;
	}
	std::size_t id() const { return id_; }
	bool valid() const { return tape_ != nullptr; }

	const Tensor<Scalar>& value() const { return tape().value(id_); }
	const Shape& shape() const { return value().shape(); }
	Index dim(int i) const { return value().dim(i); }
	Index size() const { return value().size(); }

private:
	Tape<Scalar>* tape_ = nullptr;
	std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in creation order, which is a
/// topological order, so backward is a single reverse sweep.
///
/// A tape belongs to one thread for the duration of a step.
template <typename Scalar>
class Tape {
public:
	using Storage = typename Tensor<Scalar>::Storage;
	/// Receives the node's output gradient; accumulates into inputs through
	/// Tape::grad_acc.
	using BackwardFn = std::function<void(Tape&, const Storage&)>;

	explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}
	Tape(const Tape&) = delete;
	Tape& operator=(const Tape&) = delete;

	bool check_finite() const { return check_finite_; }
	void set_check_finite(bool on) { check_finite_ = on; }

	/// Wraps an external tensor without copying. The tensor must outlive the
	/// tape; if it requires grad, backward adds into its grad buffer.
	Var<Scalar> leaf(Tensor<Scalar>& t)
	{
		Node n;
		n.op = "leaf";
		n.external = &t;
		n.needs_grad = t.requires_grad();
		return push(std::move(n));
	}

	/// Owned value that never receives a gradient.
	Var<Scalar> constant(Tensor<Scalar> t)
	{
		Node n;
		n.op = "constant";
		n.owned = std::move(t);
		return push(std::move(n));
	}

	Var<Scalar> record(const char* op, Tensor<Scalar> value, std::vector<std::size_t> inputs, BackwardFn fn)
	{
		if (check_finite_ && !value.all_finite())
			throw NumericalError(std::string("non-finite value produced by ") + op);
		Node n;
		n.op = op;
		n.owned = std::move(value);
		n.inputs = std::move(inputs);
		for (std::size_t in : n.inputs) n.needs_grad = n.needs_grad || nodes_.at(in).needs_grad;
		if (n.needs_grad) n.backward = std::move(fn);
		return push(std::move(n));
	}

	const Tensor<Scalar>& value(std::size_t id) const
	{
		const Node& n = nodes_.at(id);
		return n.external ? *n.external : n.owned;
	}
	bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
	const char* op_name(std::size_t id) const { return nodes_.at(id).op; }
	std::size_t size() const { return nodes_.size(); }
	bool backward_done() const { return backward_done_; }

	/// Gradient accumulator of a node, zero-allocated on first use.
	Storage& grad_acc(std::size_t id)
	{
		Node& n = nodes_.at(id);
		if (n.grad.size() == 0) n.grad = Storage::Zero(value(id).size());
		return n.grad;
	}

	bool has_grad(const Var<Scalar>& v) const { return nodes_.at(v.id()).grad.size() > 0; }

	/// dLoss/dv after backward. Zero if v did not influence the loss.
	Storage grad(const Var<Scalar>& v) const
	{
		own(v);
		if (!backward_done_) throw StateError("gradient requested before backward");
		const Node& n = nodes_.at(v.id());
		if (n.grad.size() == 0) return Storage::Zero(value(v.id()).size());
		return n.grad;
	}
	Tensor<Scalar> grad_tensor(const Var<Scalar>& v) const { return Tensor<Scalar>(v.shape(), grad(v)); }

	void backward(const Var<Scalar>& loss)
	{
		own(loss);
		if (backward_done_) throw StateError("backward called twice on the same tape without reset");
		if (value(loss.id()).size() != 1) throw ShapeError("backward requires a scalar loss, got shape " +
		                                                     shape_str(value(loss.id()).shape()));
		if (!nodes_.at(loss.id()).needs_grad) throw StateError("loss does not depend on any tensor requiring grad");

		std::vector<char> reachable(nodes_.size(), 0);
		reachable[loss.id()] = 1;
		for (std::size_t id = loss.id() + 1; id-- > 0;) {
			if (!reachable[id]) continue;
			for (std::size_t in : nodes_[id].inputs) reachable[in] = 1;
		}

		grad_acc(loss.id()).setConstant(Scalar(1));
		for (std::size_t id = loss.id() + 1; id-- > 0;) {
			Node& n = nodes_[id];
			if (!reachable[id] || !n.needs_grad || n.grad.size() == 0) continue;
			if (check_finite_ && !n.grad.isFinite().all())
				throw NumericalError(std::string("non-finite gradient at ") + n.op);
			if (n.backward) n.backward(*this, n.grad);
		}
		for (std::size_t id = 0; id <= loss.id(); ++id) {
			Node& n = nodes_[id];
			if (n.external && n.needs_grad && n.grad.size() > 0) n.external->grad_mut() += n.grad;
		}
		backward_done_ = true;
	}

	void reset()
	{
		nodes_.clear();
		backward_done_ = false;
	}

private:
	struct Node {
		const char* op = "";
		Tensor<Scalar> owned;
		Tensor<Scalar>* external = nullptr;
		std::vector<std::size_t> inputs;
		BackwardFn backward;
		Storage grad;
		bool needs_grad = false;
	};

	Var<Scalar> push(Node&& n)
	{
		nodes_.push_back(std::move(n));
		return Var<Scalar>(this, nodes_.size() - 1);
	}

	void own(const Var<Scalar>& v) const
	{
		if (!v.valid() || &v.tape() != this || v.id() >= nodes_.size())
			throw StateError("variable does not belong to this tape");
	}

	std::deque<Node> nodes_;
	bool check_finite_;
	bool backward_done_ = false;
};

template <typename Scalar>
void backward(const Var<Scalar>& loss)
{
	loss.tape().backward(loss);
}

} // namespace wsbcn
