// SPDX-License-Identifier: Apache-2.0
#include "cdb/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cdb/errors.hpp"

namespace cdb {

namespace {

constexpr char kMagic[4] = {'C', 'D', 'B', 'K'};

template <class T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

void put_str(std::string& out, std::string_view s) {
  put_le(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return std::string(raw(le<std::uint32_t>())); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string qualified_name(std::size_t layer, const ParamTensor& p) { return std::to_string(layer) + "." + p.name; }

struct Header {
  std::string topology;
  std::uint32_t param_count;
};

Header read_header(Reader& r) {
  const auto magic = r.raw(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("not a CDBK checkpoint (bad magic)");
  const auto version = r.le<std::uint16_t>();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Header h;
  h.topology = r.str();
  h.param_count = r.le<std::uint32_t>();
  return h;
}

void read_params(Reader& r, Network& net, std::uint32_t count) {
  std::vector<std::pair<std::string, ParamTensor*>> expected;
  for (std::size_t li = 0; li < net.size(); ++li)
    for (auto* p : net.layer(li).mutable_params()) expected.emplace_back(qualified_name(li, *p), p);
  if (count != expected.size())
    throw FormatError("checkpoint holds " + std::to_string(count) + " parameters, network has " +
                      std::to_string(expected.size()));
  for (auto& [name, p] : expected) {
    const auto stored = r.str();
    if (stored != name) throw FormatError("checkpoint parameter '" + stored + "' where '" + name + "' was expected");
    const auto rank = r.le<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.le<std::uint64_t>());
    if (shape != p->values.shape())
      throw FormatError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) + ", network expects " +
                        shape_str(p->values.shape()));
    for (auto& v : p->values.data()) v = r.f64();
    for (auto& v : p->momentum.data()) v = r.f64();
    p->grad.fill(0.0);
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint payload");
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string encode_checkpoint(const Network& net) {
  std::string out(kMagic, 4);
  put_le(out, kCheckpointVersion);
  put_str(out, net.describe());
  put_le(out, static_cast<std::uint32_t>(net.params().size()));
  for (std::size_t li = 0; li < net.size(); ++li)
    for (const auto* p : net.layer(li).params()) {
      put_str(out, qualified_name(li, *p));
      put_le(out, static_cast<std::uint32_t>(p->values.rank()));
      for (auto d : p->values.shape()) put_le(out, static_cast<std::uint64_t>(d));
      for (double v : p->values.data()) put_f64(out, v);
      for (double v : p->momentum.data()) put_f64(out, v);
    }
  return out;
}

Network decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  const Header h = read_header(r);
  Network net;
  try {
    net = build_network(h.topology);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint topology is invalid: ") + e.what());
  }
  read_params(r, net, h.param_count);
  return net;
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing " + path.string());
}

Network load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_all(path)); }

void load_checkpoint_into(Network& net, const std::filesystem::path& path) {
  const std::string bytes = read_all(path);
  Reader r(bytes);
  const Header h = read_header(r);
  if (h.topology != net.describe())
    throw FormatError("checkpoint topology '" + h.topology + "' does not match network '" + net.describe() + "'");
  Network restored = net;
  read_params(r, restored, h.param_count);
  net = std::move(restored);
}

}  // namespace cdb
