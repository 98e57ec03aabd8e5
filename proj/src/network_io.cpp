#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cav/network.hpp"

namespace cav {

namespace {

constexpr const char* kMagic = "CAVNET1";
constexpr int kVersion = 1;

void write_f64(std::ostream& out, const std::vector<double>& v) {
  for (double d : v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(d);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
  }
}

std::vector<double> read_f64(std::istream& in, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t k = 0; k < n; ++k) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError("truncated parameter blob");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    v[k] = std::bit_cast<double>(bits);
  }
  return v;
}

std::string next_line(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("unexpected end of header");
  return line;
}

std::size_t parse_count(std::istringstream& ls, const std::string& line) {
  long long v = -1;
  if (!(ls >> v) || v <= 0) throw FormatError("bad count in header line: " + line);
  return static_cast<std::size_t>(v);
}

}  // namespace

void save_network(const Network& net, std::ostream& out) {
  out << kMagic << "\n";
  out << "version " << kVersion << "\n";
  out << "input";
  for (std::size_t d : net.input_shape()) out << ' ' << d;
  out << "\nclasses " << net.num_classes() << "\n";
  out << "layers " << net.layers().size() << "\n";
  for (const Layer& layer : net.layers()) {
    if (auto* d = std::get_if<Dense>(&layer)) {
      out << "dense " << d->out << ' ' << d->in << "\n";
    } else if (auto* c = std::get_if<Conv2d>(&layer)) {
      out << "conv2d " << c->out_channels << ' ' << c->in_channels << ' ' << c->kernel_h << ' '
          << c->kernel_w << ' ' << c->stride << "\n";
    } else {
      out << layer_name(layer) << "\n";
    }
  }
  out << "end\n";
  for (const Layer& layer : net.layers()) {
    if (auto* d = std::get_if<Dense>(&layer)) write_f64(out, d->weights), write_f64(out, d->bias);
    if (auto* c = std::get_if<Conv2d>(&layer)) write_f64(out, c->kernels), write_f64(out, c->bias);
  }
  if (!out) throw std::runtime_error("failed writing network");
}

Network load_network(std::istream& in) {
  if (next_line(in) != kMagic) throw FormatError("missing CAVNET1 magic");
  Shape input;
  std::size_t classes = 0, count = 0;
  bool have_version = false, have_layers = false;
  std::vector<Layer> layers;
  for (;;) {
    std::string line = next_line(in);
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "end") break;
    if (key == "version") {
      int v = 0;
      if (!(ls >> v)) throw FormatError("bad version line");
      if (v != kVersion) throw FormatError("unsupported model version " + std::to_string(v));
      have_version = true;
    } else if (key == "input") {
      std::size_t d;
      while (ls >> d) input.push_back(d);
    } else if (key == "classes") {
      classes = parse_count(ls, line);
    } else if (key == "layers") {
      count = parse_count(ls, line);
      have_layers = true;
    } else if (key == "dense") {
      Dense d;
      d.out = parse_count(ls, line);
      d.in = parse_count(ls, line);
      layers.emplace_back(std::move(d));
    } else if (key == "conv2d") {
      Conv2d c;
      c.out_channels = parse_count(ls, line);
      c.in_channels = parse_count(ls, line);
      c.kernel_h = parse_count(ls, line);
      c.kernel_w = parse_count(ls, line);
      c.stride = parse_count(ls, line);
      layers.emplace_back(std::move(c));
    } else if (key == "relu") {
      layers.emplace_back(Relu{});
    } else if (key == "flatten") {
      layers.emplace_back(Flatten{});
    } else {
      throw FormatError("unknown header line: " + line);
    }
  }
  if (!have_version) throw FormatError("missing version");
  if (!have_layers || count != layers.size()) throw FormatError("layer count mismatch");
  if (input.empty()) throw FormatError("missing input shape");
  for (Layer& layer : layers) {
    if (auto* d = std::get_if<Dense>(&layer)) {
      d->weights = read_f64(in, d->out * d->in);
      d->bias = read_f64(in, d->out);
    } else if (auto* c = std::get_if<Conv2d>(&layer)) {
      c->kernels = read_f64(in, c->out_channels * c->in_channels * c->kernel_h * c->kernel_w);
      c->bias = read_f64(in, c->out_channels);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after blobs");
  try {
    return Network(std::move(input), std::move(layers), classes);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("inconsistent model: ") + e.what());
  }
}

void save_network(const Network& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  save_network(net, out);
}

Network load_network(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return load_network(in);
}

std::string serialize(const Network& net) {
  std::ostringstream out(std::ios::binary);
  save_network(net, out);
  return out.str();
}

Network deserialize(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return load_network(in);
}

}  // namespace cav
