#include "wsbcn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace wsbcn {

namespace {

constexpr char kMagic[8] = {'W', 'S', 'B', 'C', 'N', 'C', 'K', 'P'};

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes)
{
	std::uint64_t h = 0xcbf29ce484222325ull;
	for (std::uint8_t b : bytes) {
		h ^= b;
		h *= 0x100000001b3ull;
	}
	return h;
}

class Writer {
public:
	void u32(std::uint32_t v) { le(v, 4); }
	void u64(std::uint64_t v) { le(v, 8); }
	void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
	void str(const std::string& s)
	{
		u32(static_cast<std::uint32_t>(s.size()));
		out.insert(out.end(), s.begin(), s.end());
	}
	std::vector<std::uint8_t> out;

private:
	void le(std::uint64_t v, int n)
	{
		for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
	}
};

class Reader {
public:
	explicit Reader(std::span<const std::uint8_t> b) : bytes(b) {}
	std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
	std::uint64_t u64() { return le(8); }
	double f64() { return std::bit_cast<double>(le(8)); }
	std::string str()
	{
		const std::uint32_t n = u32();
		need(n);
		std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
		pos += n;
		return s;
	}
	void need(std::size_t n) const
	{
		if (bytes.size() - pos < n) throw FormatError("checkpoint is truncated");
	}
	std::span<const std::uint8_t> bytes;
	std::size_t pos = 0;

private:
	std::uint64_t le(int n)
	{
		need(static_cast<std::size_t>(n));
		std::uint64_t v = 0;
		for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
		pos += static_cast<std::size_t>(n);
		return v;
	}
};

} // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck)
{
	Writer w;
	w.out.insert(w.out.end(), std::begin(kMagic), std::end(kMagic));
	w.u32(kCheckpointVersion);
	w.u32(static_cast<std::uint32_t>(ck.meta.size()));
	for (const auto& [k, v] : ck.meta) {
		w.str(k);
		w.str(v);
	}
	w.u32(static_cast<std::uint32_t>(ck.arrays.size()));
	for (const auto& a : ck.arrays) {
		std::int64_t n = 1;
		for (std::int64_t d : a.shape) n *= d;
		if (n != static_cast<std::int64_t>(a.values.size()))
			throw ShapeError("checkpoint array '" + a.name + "' has " + std::to_string(a.values.size()) +
			                 " values for its shape");
		w.str(a.name);
		w.u32(static_cast<std::uint32_t>(a.shape.size()));
		for (std::int64_t d : a.shape) w.u64(static_cast<std::uint64_t>(d));
		for (double v : a.values) w.f64(v);
	}
	w.u64(fnv1a(w.out));
	return w.out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes)
{
	if (bytes.size() < sizeof(kMagic) + 12 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
		throw FormatError("not a checkpoint file (bad magic)");
	Reader r(bytes.first(bytes.size() - 8));
	r.pos = sizeof(kMagic);
	const std::uint32_t version = r.u32();
	if (version != kCheckpointVersion)
		throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
		                  std::to_string(kCheckpointVersion) + ")");
	Reader tail(bytes.last(8));
	if (tail.u64() != fnv1a(bytes.first(bytes.size() - 8))) throw FormatError("checkpoint checksum mismatch");

	Checkpoint ck;
	const std::uint32_t nmeta = r.u32();
	for (std::uint32_t i = 0; i < nmeta; ++i) {
		std::string k = r.str();
		ck.meta.emplace_back(std::move(k), r.str());
	}
	const std::uint32_t narrays = r.u32();
	for (std::uint32_t i = 0; i < narrays; ++i) {
		NamedArray a;
		a.name = r.str();
		const std::uint32_t rank = r.u32();
		std::uint64_t n = 1;
		for (std::uint32_t d = 0; d < rank; ++d) {
			a.shape.push_back(static_cast<std::int64_t>(r.u64()));
			n *= static_cast<std::uint64_t>(a.shape.back());
		}
		r.need(n * 8);
		a.values.resize(n);
		for (double& v : a.values) v = r.f64();
		ck.arrays.push_back(std::move(a));
	}
	if (r.pos != r.bytes.size()) throw FormatError("checkpoint has trailing bytes");
	return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& file)
{
	const auto bytes = encode_checkpoint(ck);
	const auto tmp = file.string() + ".tmp";
	{
		std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
		if (!out) throw IoError("cannot write checkpoint " + tmp);
		out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
		if (!out) throw IoError("failed writing checkpoint " + tmp);
	}
	std::filesystem::rename(tmp, file);
}

Checkpoint load_checkpoint(const std::filesystem::path& file)
{
	std::ifstream in(file, std::ios::binary);
	if (!in) throw IoError("cannot open checkpoint " + file.string());
	const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
	return decode_checkpoint(bytes);
}

} // namespace wsbcn
