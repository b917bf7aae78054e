#include "pcb_sentinel/nn/sequential.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "pcb_sentinel/errors.hpp"

namespace pcb_sentinel::nn {

Sequential::Sequential(const Sequential& other) : names_(other.names_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void Sequential::add(std::unique_ptr<Layer> layer, std::string name) {
  layers_.push_back(std::move(layer));
  names_.push_back(std::move(name));
}

Tensor Sequential::forward(const Tensor& x, std::size_t begin, std::size_t end) const {
  end = std::min(end, layers_.size());
  Tensor h = x;
  for (std::size_t i = begin; i < end; ++i) h = layers_[i]->forward(h);
  return h;
}

Tensor Sequential::forward_train(const Tensor& x, Tape& tape, std::size_t begin, std::size_t end) {
  end = std::min(end, layers_.size());
  tape.begin = begin;
  tape.saved.assign(end - begin, Saved{});
  Tensor h = x;
  for (std::size_t i = begin; i < end; ++i) h = layers_[i]->forward_train(h, tape.saved[i - begin]);
  return h;
}

Tensor Sequential::forward_frozen(const Tensor& x, Tape& tape, std::size_t begin, std::size_t end) const {
  end = std::min(end, layers_.size());
  tape.begin = begin;
  tape.saved.assign(end - begin, Saved{});
  Tensor h = x;
  for (std::size_t i = begin; i < end; ++i) h = layers_[i]->forward_frozen(h, tape.saved[i - begin]);
  return h;
}

Tensor Sequential::backward_input(const Tensor& dy, const Tape& tape) const {
  Tensor g = dy;
  for (std::size_t k = tape.saved.size(); k-- > 0;) g = layers_[tape.begin + k]->backward_input(g, tape.saved[k]);
  return g;
}

Tensor Sequential::backward(const Tensor& dy, const Tape& tape) {
  Tensor g = dy;
  for (std::size_t k = tape.saved.size(); k-- > 0;) {
    Layer& l = *layers_[tape.begin + k];
    l.accumulate_grads(g, tape.saved[k]);
    g = l.backward_input(g, tape.saved[k]);
  }
  return g;
}

Shape Sequential::output_shape(const Shape& in, std::size_t begin, std::size_t end) const {
  end = std::min(end, layers_.size());
  Shape s = in;
  for (std::size_t i = begin; i < end; ++i) s = layers_[i]->output_shape(s);
  return s;
}

std::vector<Param*> Sequential::params() {
  std::vector<Param*> out;
  for (auto& l : layers_) {
    for (Param* p : l->params()) out.push_back(p);
  }
  return out;
}

std::vector<const Param*> Sequential::params() const {
  std::vector<const Param*> out;
  for (const auto& l : layers_) {
    for (const Param* p : l->param_view()) out.push_back(p);
  }
  return out;
}

std::size_t Sequential::parameter_count() const {
  std::size_t n = 0;
  for (const Param* p : params()) n += p->value.size();
  return n;
}

void Sequential::zero_grad() {
  for (Param* p : params()) p->grad.fill(0.0f);
}

std::vector<std::pair<std::string, const Tensor*>> Sequential::state() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (const Param* p : layers_[i]->param_view()) out.emplace_back(names_[i] + "." + p->name, &p->value);
    const auto bufs = layers_[i]->buffer_view();
    for (std::size_t b = 0; b < bufs.size(); ++b) out.emplace_back(names_[i] + ".buffer" + std::to_string(b), bufs[b]);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Sequential::mutable_state() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (Param* p : layers_[i]->params()) out.emplace_back(names_[i] + "." + p->name, &p->value);
    const auto bufs = layers_[i]->buffers();
    for (std::size_t b = 0; b < bufs.size(); ++b) out.emplace_back(names_[i] + ".buffer" + std::to_string(b), bufs[b]);
  }
  return out;
}

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated weight archive");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

constexpr std::uint32_t kArchiveVersion = 1;

}  // namespace

void save_state(const std::filesystem::path& path, const Sequential& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError("cannot write " + path.string());
  const auto st = net.state();
  out.write("PCBW", 4);
  write_u32(out, kArchiveVersion);
  write_u32(out, static_cast<std::uint32_t>(st.size()));
  for (const auto& [name, t] : st) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Shape& s = t->shape();
    for (int d : {s.n, s.c, s.h, s.w}) write_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t->data()) write_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw IOError("failed writing " + path.string());
}

void load_state(const std::filesystem::path& path, Sequential& net) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot read " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "PCBW", 4) != 0) throw FormatError("not a PCBW archive: " + path.string());
  if (read_u32(in) != kArchiveVersion) throw FormatError("unsupported archive version");
  auto st = net.mutable_state();
  if (read_u32(in) != st.size()) throw FormatError("archive tensor count does not match the architecture");
  for (auto& [name, t] : st) {
    const std::uint32_t len = read_u32(in);
    std::string stored(len, '\0');
    if (!in.read(stored.data(), len)) throw FormatError("truncated weight archive");
    if (stored != name) throw FormatError("archive entry '" + stored + "' where '" + name + "' was expected");
    Shape s;
    s.n = static_cast<int>(read_u32(in));
    s.c = static_cast<int>(read_u32(in));
    s.h = static_cast<int>(read_u32(in));
    s.w = static_cast<int>(read_u32(in));
    if (s != t->shape()) throw FormatError("shape mismatch for " + name + ": " + s.str() + " vs " + t->shape().str());
    for (float& v : t->data()) v = std::bit_cast<float>(read_u32(in));
  }
}

}  // namespace pcb_sentinel::nn
