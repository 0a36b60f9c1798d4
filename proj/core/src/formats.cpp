#include "datamodels/formats.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include <zlib.h>

#include "datamodels/errors.hpp"

namespace dm {

static_assert(std::endian::native == std::endian::little,
              "artifact encoders assume a little-endian host");

std::uint32_t crc32(std::span<const std::uint8_t> bytes,
                    std::uint32_t crc) noexcept {
  // zlib takes uInt lengths; feed large buffers in chunks.
  uLong c = crc;
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    c = ::crc32(c, bytes.data() + off, static_cast<uInt>(chunk));
    off += chunk;
  }
  return static_cast<std::uint32_t>(c);
}

namespace {

constexpr char kMaskMagic[4] = {'D', 'M', 'D', 'M'};
constexpr char kOutputMagic[4] = {'D', 'M', 'O', 'U'};
constexpr char kModelMagic[4] = {'D', 'M', 'T', 'H'};

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <typename T>
  void put(T v) {
    raw(&v, sizeof v);
  }
  void byte(std::uint8_t b) { buf_.push_back(b); }
  std::vector<std::uint8_t> finish_with_crc() {
    put<std::uint32_t>(crc32(buf_));
    return std::move(buf_);
  }
  std::vector<std::uint8_t> finish() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}

  std::size_t offset() const noexcept { return off_; }
  std::size_t remaining() const noexcept { return b_.size() - off_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(std::string("truncated file while reading ") + what,
                        off_);
    }
  }
  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, b_.data() + off_, sizeof v);
    off_ += sizeof v;
    return v;
  }
  std::span<const std::uint8_t> bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = b_.subspan(off_, n);
    off_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t off_ = 0;
};

void check_magic(ByteReader& r, const char (&magic)[4], const char* kind) {
  auto m = r.bytes(4, "magic");
  if (std::memcmp(m.data(), magic, 4) != 0) {
    throw FormatError(std::string("bad magic: not a ") + kind + " file", 0);
  }
}

void check_version(ByteReader& r) {
  const auto at = r.offset();
  const auto v = r.get<std::uint32_t>("version");
  if (v != kFormatVersion) {
    throw FormatError("unsupported format version " + std::to_string(v), at);
  }
}

void verify_crc(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("truncated file: missing checksum", 0);
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  if (crc32(body) != stored) {
    throw FormatError("checksum mismatch", body.size());
  }
}

// Row of `bits` packed bits -> ceil(bits/8) little-endian bytes.
void put_packed_row(ByteWriter& w, MaskView row) {
  const std::size_t nbytes = (row.size() + 7) / 8;
  const auto words = row.words();
  for (std::size_t b = 0; b < nbytes; ++b) {
    w.byte(static_cast<std::uint8_t>(words[b / 8] >> (8 * (b % 8))));
  }
}

void get_packed_row(ByteReader& r, std::size_t bits, std::uint64_t* words,
                    const char* what) {
  const std::size_t nbytes = (bits + 7) / 8;
  const auto at = r.offset();
  auto src = r.bytes(nbytes, what);
  for (std::size_t b = 0; b < nbytes; ++b) {
    words[b / 8] |= static_cast<std::uint64_t>(src[b]) << (8 * (b % 8));
  }
  if (bits % 8 != 0) {
    const std::uint8_t pad_mask =
        static_cast<std::uint8_t>(0xffu << (bits % 8));
    if (src[nbytes - 1] & pad_mask) {
      throw FormatError(std::string("nonzero padding bits in ") + what,
                        at + nbytes - 1);
    }
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path,
                const std::vector<std::uint8_t>& bytes) {
  // Write to a sibling temp file and rename so readers never see a torn file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ValidationError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

std::vector<std::uint8_t> encode_masks(const MaskMatrix& masks) {
  ByteWriter w;
  w.raw(kMaskMagic, 4);
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::uint64_t>(masks.rows());
  w.put<std::uint64_t>(masks.cols());
  w.put<double>(masks.alpha());
  w.put<std::uint64_t>(masks.seed());
  for (std::size_t i = 0; i < masks.rows(); ++i) put_packed_row(w, masks.row(i));
  return w.finish_with_crc();
}

MaskMatrix decode_masks(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  check_magic(r, kMaskMagic, "mask");
  check_version(r);
  const auto m = r.get<std::uint64_t>("m");
  const auto d = r.get<std::uint64_t>("d");
  const auto alpha = r.get<double>("alpha");
  const auto seed = r.get<std::uint64_t>("seed");
  const std::uint64_t row_bytes = (d + 7) / 8;
  if (d != 0 && m > r.remaining() / row_bytes) {
    throw FormatError("truncated file: header declares " + std::to_string(m) +
                          " rows of " + std::to_string(row_bytes) + " bytes",
                      r.offset());
  }
  verify_crc(bytes);
  MaskMatrix out(m, d, alpha, seed);
  // MaskMatrix storage is private; rebuild via SubsetMask-sized scratch.
  std::vector<std::uint64_t> scratch(words_for_bits(d));
  for (std::uint64_t i = 0; i < m; ++i) {
    std::fill(scratch.begin(), scratch.end(), 0);
    get_packed_row(r, d, scratch.data(), "mask row");
    MaskView v(scratch.data(), d);
    v.for_each_set([&](std::size_t j) { out.set_bit(i, j); });
  }
  if (r.remaining() != 4) {
    throw FormatError("unexpected trailing bytes before checksum", r.offset());
  }
  return out;
}

std::vector<std::uint8_t> encode_outputs(const OutputMatrix& o) {
  ByteWriter w;
  w.raw(kOutputMagic, 4);
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::uint64_t>(o.rows());
  w.put<std::uint64_t>(o.cols());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(o.output_fn()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(o.trainer_id().size()));
  w.raw(o.trainer_id().data(), o.trainer_id().size());
  w.raw(o.values().data(), o.values().size() * sizeof(float));
  for (std::size_t i = 0; i < o.rows(); ++i) put_packed_row(w, o.exclusion_row(i));
  return w.finish_with_crc();
}

OutputMatrix decode_outputs(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  check_magic(r, kOutputMagic, "outputs");
  check_version(r);
  const auto m = r.get<std::uint64_t>("m");
  const auto n = r.get<std::uint64_t>("n");
  const auto fn_at = r.offset();
  const auto fn = r.get<std::uint32_t>("output_fn");
  if (fn > static_cast<std::uint32_t>(OutputFn::prediction)) {
    throw FormatError("unknown output function id " + std::to_string(fn), fn_at);
  }
  const auto id_len = r.get<std::uint32_t>("trainer id length");
  auto id_bytes = r.bytes(id_len, "trainer id");
  std::string trainer(id_bytes.begin(), id_bytes.end());
  const std::uint64_t row_bytes = n * sizeof(float) + (n + 7) / 8;
  if (n != 0 && m > r.remaining() / row_bytes) {
    throw FormatError("truncated file: header declares " + std::to_string(m) +
                          "x" + std::to_string(n) + " outputs",
                      r.offset());
  }
  verify_crc(bytes);
  OutputMatrix out(m, n, static_cast<OutputFn>(fn), std::move(trainer));
  auto vals = r.bytes(m * n * sizeof(float), "values");
  for (std::uint64_t i = 0; i < m; ++i) {
    for (std::uint64_t j = 0; j < n; ++j) {
      float v;
      std::memcpy(&v, vals.data() + (i * n + j) * sizeof(float), sizeof v);
      out.set_value(i, j, v);
    }
  }
  std::vector<std::uint64_t> scratch(words_for_bits(n));
  for (std::uint64_t i = 0; i < m; ++i) {
    std::fill(scratch.begin(), scratch.end(), 0);
    get_packed_row(r, n, scratch.data(), "exclusion row");
    MaskView v(scratch.data(), n);
    v.for_each_set([&](std::size_t j) { out.set_excluded(i, j); });
  }
  if (r.remaining() != 4) {
    throw FormatError("unexpected trailing bytes before checksum", r.offset());
  }
  return out;
}

std::vector<std::uint8_t> encode_datamodels(std::span<const Datamodel> models) {
  ByteWriter w;
  w.raw(kModelMagic, 4);
  const std::uint64_t d = models.empty() ? 0 : static_cast<std::uint64_t>(models[0].theta.size());
  w.put<std::uint64_t>(models.size());
  w.put<std::uint64_t>(d);
  for (const auto& dm : models) {
    if (static_cast<std::uint64_t>(dm.theta.size()) != d) {
      throw ValidationError("datamodels in one file must share d");
    }
    w.put<std::uint64_t>(dm.target_id);
    w.put<double>(dm.bias);
    w.put<std::uint64_t>(dm.sparsity());
    for (Eigen::Index i = 0; i < dm.theta.size(); ++i) {
      if (dm.theta[i] != 0.0) {
        w.put<std::uint64_t>(static_cast<std::uint64_t>(i));
        w.put<double>(dm.theta[i]);
      }
    }
    w.put<double>(dm.lambda);
  }
  return w.finish();
}

std::vector<Datamodel> decode_datamodels(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  check_magic(r, kModelMagic, "datamodel");
  const auto n = r.get<std::uint64_t>("n");
  const auto d = r.get<std::uint64_t>("d");
  // Every record takes at least 32 bytes.
  if (n > r.remaining() / 32) {
    throw FormatError("truncated file: header declares " + std::to_string(n) +
                          " datamodels",
                      r.offset());
  }
  std::vector<Datamodel> out;
  out.reserve(n);
  for (std::uint64_t t = 0; t < n; ++t) {
    Datamodel m;
    m.theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    m.target_id = r.get<std::uint64_t>("target id");
    m.bias = r.get<double>("bias");
    const auto nnz_at = r.offset();
    const auto nnz = r.get<std::uint64_t>("nnz");
    if (nnz > d) throw FormatError("nnz exceeds d", nnz_at);
    std::uint64_t prev = 0;
    for (std::uint64_t k = 0; k < nnz; ++k) {
      const auto at = r.offset();
      const auto idx = r.get<std::uint64_t>("index");
      if (idx >= d || (k > 0 && idx <= prev)) {
        throw FormatError("coefficient indices must be increasing and < d", at);
      }
      prev = idx;
      m.theta[static_cast<Eigen::Index>(idx)] = r.get<double>("value");
    }
    m.lambda = r.get<double>("lambda");
    out.push_back(std::move(m));
  }
  if (r.remaining() != 0) {
    throw FormatError("unexpected trailing bytes", r.offset());
  }
  return out;
}

void write_masks(const MaskMatrix& masks, const std::filesystem::path& path) {
  write_file(path, encode_masks(masks));
}

MaskMatrix read_masks(const std::filesystem::path& path) {
  return decode_masks(read_file(path));
}

void write_outputs(const OutputMatrix& outputs,
                   const std::filesystem::path& path) {
  write_file(path, encode_outputs(outputs));
}

OutputMatrix read_outputs(const std::filesystem::path& path) {
  return decode_outputs(read_file(path));
}

void write_datamodels(std::span<const Datamodel> models,
                      const std::filesystem::path& path) {
  write_file(path, encode_datamodels(models));
}

std::vector<Datamodel> read_datamodels(const std::filesystem::path& path) {
  return decode_datamodels(read_file(path));
}

}  // namespace dm
