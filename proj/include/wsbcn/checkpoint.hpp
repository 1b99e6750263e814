#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wsbcn/train.hpp"

namespace wsbcn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
	std::string name;
	std::vector<std::int64_t> shape;
	std::vector<double> values;
};

/// Versioned container: string metadata plus a table of named float64
/// arrays. On disk: magic "WSBCNCKP", u32 version, metadata, array table,
/// all little-endian, followed by a 64-bit FNV-1a checksum of the preceding
/// bytes.
struct Checkpoint {
	std::vector<std::pair<std::string, std::string>> meta;
	std::vector<NamedArray> arrays;

	const std::string* meta_value(const std::string& key) const
	{
		for (const auto& [k, v] : meta)
			if (k == key) return &v;
		return nullptr;
	}
	const NamedArray* find(const std::string& name) const
	{
		for (const auto& a : arrays)
			if (a.name == name) return &a;
		return nullptr;
	}
};

/// A checkpoint that does not fit the model it is loaded into.
struct CheckpointMismatch : ContractError {
	CheckpointMismatch(const std::string& tensor, const std::string& what)
	    : ContractError("checkpoint tensor '" + tensor + "': " + what), tensor(tensor)
	{
	}
	std::string tensor;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file);

namespace detail {

template <typename Scalar>
std::vector<std::pair<std::string, NamedArray>> model_arrays(Model<Scalar>& model)
{
	std::vector<std::pair<std::string, NamedArray>> out;
	for (auto& [info, t] : model.parameters()) {
		NamedArray a{info.name, {t->shape().begin(), t->shape().end()}, {}};
		a.values.assign(t->ptr(), t->ptr() + t->size());
		out.emplace_back(info.name, std::move(a));
	}
	for (auto& [name, b] : model.buffers()) {
		NamedArray a{name, {b->size()}, {b->data(), b->data() + b->size()}};
		out.emplace_back(name, std::move(a));
	}
	return out;
}

inline void expect_shape(const NamedArray& got, const std::string& name, const std::vector<std::int64_t>& shape)
{
	if (got.shape != shape) {
		std::string s = "shape [";
		for (std::size_t i = 0; i < got.shape.size(); ++i) s += (i ? "," : "") + std::to_string(got.shape[i]);
		s += "] does not match the model's [";
		for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
		throw CheckpointMismatch(name, s + "]");
	}
}

} // namespace detail

/// Model parameters and buffers, plus optimizer velocity, RNG and position
/// when a trainer is given.
template <typename Scalar>
Checkpoint capture_checkpoint(Model<Scalar>& model, Trainer<Scalar>* trainer = nullptr)
{
	Checkpoint ck;
	ck.meta.emplace_back("model", model.spec.describe());
	ck.meta.emplace_back("scalar", sizeof(Scalar) == 4 ? "float32" : "float64");
	ck.meta.emplace_back("code_version", WSBCN_VERSION);
	for (auto& [name, a] : detail::model_arrays(model)) ck.arrays.push_back(std::move(a));
	if (trainer) {
		ck.meta.emplace_back("epoch", std::to_string(trainer->epoch()));
		ck.meta.emplace_back("step", std::to_string(trainer->step()));
		ck.meta.emplace_back("rng", trainer->rng_state());
		const auto params = model.parameters();
		for (std::size_t p = 0; p < params.size(); ++p) {
			const auto& v = trainer->velocity()[p];
			ck.arrays.push_back({"velocity." + params[p].first.name, {v.size()}, {v.data(), v.data() + v.size()}});
		}
	}
	return ck;
}

/// Restores what capture_checkpoint stored. Tensors are matched by name and
/// shape; the first one that is missing or mis-shaped is named in the error.
template <typename Scalar>
void restore_checkpoint(const Checkpoint& ck, Model<Scalar>& model, Trainer<Scalar>* trainer = nullptr)
{
	// Validate everything before touching the model.
	auto expected = detail::model_arrays(model);
	for (const auto& [name, a] : expected) {
		const NamedArray* got = ck.find(name);
		if (!got) throw CheckpointMismatch(name, "missing from checkpoint");
		detail::expect_shape(*got, name, a.shape);
	}
	auto params = model.parameters();
	if (trainer) {
		for (std::size_t p = 0; p < params.size(); ++p) {
			const std::string name = "velocity." + params[p].first.name;
			const NamedArray* got = ck.find(name);
			if (!got) throw CheckpointMismatch(name, "missing from checkpoint");
			detail::expect_shape(*got, name, {params[p].second->size()});
		}
		for (const char* key : {"epoch", "step", "rng"})
			if (!ck.meta_value(key)) throw FormatError(std::string("checkpoint has no '") + key + "' entry");
	}
	for (auto& [info, t] : params) {
		const NamedArray* a = ck.find(info.name);
		for (Index i = 0; i < t->size(); ++i) (*t)[i] = static_cast<Scalar>(a->values[static_cast<std::size_t>(i)]);
	}
	for (auto& [name, b] : model.buffers()) {
		const NamedArray* a = ck.find(name);
		*b = Eigen::Map<const Eigen::ArrayXd>(a->values.data(), b->size());
	}
	if (trainer) {
		for (std::size_t p = 0; p < params.size(); ++p) {
			const NamedArray* a = ck.find("velocity." + params[p].first.name);
			trainer->velocity()[p] = Eigen::Map<const Eigen::ArrayXd>(a->values.data(), params[p].second->size());
		}
		trainer->set_position(std::stoll(*ck.meta_value("epoch")), std::stoll(*ck.meta_value("step")));
		trainer->set_rng_state(*ck.meta_value("rng"));
	}
}

} // namespace wsbcn
