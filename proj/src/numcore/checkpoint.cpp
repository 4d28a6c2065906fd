#include "biofuse/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "biofuse/errors.hpp"

namespace biofuse {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors) {
  out << "biofuse-checkpoint " << kCheckpointVersion << "\n";
  out << "count " << tensors.size() << "\n";
  for (const auto& nt : tensors) {
    if (nt.name.empty() || nt.name.find_first_of(" \t\n") != std::string::npos)
      throw ParameterError("checkpoint tensor name must be non-empty without whitespace: '" + nt.name + "'");
    out << "tensor " << nt.name << " " << nt.tensor.rank();
    for (auto d : nt.tensor.shape()) out << " " << d;
    out << "\n";
    const auto vals = nt.tensor.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (i) out << ' ';
      out << format_double(vals[i]);
    }
    out << "\n";
  }
}

namespace {

double parse_double(const std::string& tok, std::istream& in) {
  double v = 0.0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw FormatError("checkpoint: bad number '" + tok + "'", static_cast<std::size_t>(in.tellg()));
  return v;
}

void expect_word(std::istream& in, const std::string& word) {
  std::string tok;
  if (!(in >> tok) || tok != word)
    throw FormatError("checkpoint: expected '" + word + "', got '" + tok + "'",
                      in ? static_cast<std::size_t>(in.tellg()) : 0);
}

}  // namespace

std::vector<NamedTensor> read_checkpoint(std::istream& in) {
  expect_word(in, "biofuse-checkpoint");
  int version = 0;
  if (!(in >> version) || version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version), 0);
  expect_word(in, "count");
  std::size_t count = 0;
  if (!(in >> count)) throw FormatError("checkpoint: missing tensor count", 0);

  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    expect_word(in, "tensor");
    NamedTensor nt;
    std::size_t rank = 0;
    if (!(in >> nt.name >> rank) || rank == 0)
      throw FormatError("checkpoint: bad tensor header", in ? static_cast<std::size_t>(in.tellg()) : 0);
    Shape shape(rank);
    for (auto& d : shape)
      if (!(in >> d)) throw FormatError("checkpoint: bad shape for " + nt.name, 0);
    std::vector<double> data(shape_volume(shape));
    std::string tok;
    for (auto& v : data) {
      if (!(in >> tok)) throw FormatError("checkpoint: truncated values for " + nt.name, 0);
      v = parse_double(tok, in);
    }
    nt.tensor = Tensor(std::move(shape), std::move(data));
    out.push_back(std::move(nt));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open checkpoint for writing: " + path.string());
  write_checkpoint(out, tensors);
  if (!out) throw Error("failed writing checkpoint: " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  return read_checkpoint(in);
}

}  // namespace biofuse
