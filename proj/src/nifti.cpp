#include "followup/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

namespace followup {
namespace {

#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;    // must be 348
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];        // dim[0]=ndim, dim[1]=nx, dim[2]=ny, dim[3]=nz
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];            // pixdim[1..3] = (dx, dy, dz)
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];              // "n+1\0" for single-file
};
#pragma pack(pop)

static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtFloat32 = 16;

struct GzFileCloser {
  void operator()(gzFile f) const {
    if (f) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzFileCloser>;

void read_exact(gzFile f, void* buf, std::size_t n, const char* what) {
  const int got = gzread(f, buf, static_cast<unsigned>(n));
  if (got < 0 || static_cast<std::size_t>(got) != n)
    throw FormatError(std::string("nifti: truncated file while reading ") + what);
}

template <class T>
void swap_bytes(T& v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  for (std::size_t i = 0, j = sizeof(T) - 1; i < j; ++i, --j) std::swap(p[i], p[j]);
}

void swap_header(Nifti1Header& h) {
  swap_bytes(h.sizeof_hdr);
  swap_bytes(h.extents);
  swap_bytes(h.session_error);
  for (auto& d : h.dim) swap_bytes(d);
  swap_bytes(h.intent_p1);
  swap_bytes(h.intent_p2);
  swap_bytes(h.intent_p3);
  swap_bytes(h.intent_code);
  swap_bytes(h.datatype);
  swap_bytes(h.bitpix);
  swap_bytes(h.slice_start);
  for (auto& p : h.pixdim) swap_bytes(p);
  swap_bytes(h.vox_offset);
  swap_bytes(h.scl_slope);
  swap_bytes(h.scl_inter);
  swap_bytes(h.slice_end);
  swap_bytes(h.cal_max);
  swap_bytes(h.cal_min);
  swap_bytes(h.slice_duration);
  swap_bytes(h.toffset);
  swap_bytes(h.glmax);
  swap_bytes(h.glmin);
  swap_bytes(h.qform_code);
  swap_bytes(h.sform_code);
  swap_bytes(h.quatern_b);
  swap_bytes(h.quatern_c);
  swap_bytes(h.quatern_d);
  swap_bytes(h.qoffset_x);
  swap_bytes(h.qoffset_y);
  swap_bytes(h.qoffset_z);
  for (auto& v : h.srow_x) swap_bytes(v);
  for (auto& v : h.srow_y) swap_bytes(v);
  for (auto& v : h.srow_z) swap_bytes(v);
}

template <class Raw>
void convert_payload(const std::vector<char>& raw, bool swapped, double slope, double inter, Volume3D& out) {
  const auto* src = reinterpret_cast<const Raw*>(raw.data());
  for (std::size_t i = 0; i < out.size(); ++i) {
    Raw r = src[i];
    if (swapped && sizeof(Raw) > 1) swap_bytes(r);
    out.data[i] = static_cast<float>(slope * static_cast<double>(r) + inter);
  }
}

}  // namespace

Volume3D load_volume(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("nifti: no such file: " + path.string());
  GzHandle f(gzopen(path.string().c_str(), "rb"));
  if (!f) throw IoError("nifti: cannot open " + path.string());

  Nifti1Header h{};
  read_exact(f.get(), &h, sizeof(h), "header");

  bool swapped = false;
  if (h.sizeof_hdr != 348) {
    auto test = h.sizeof_hdr;
    swap_bytes(test);
    if (test != 348) throw FormatError("nifti: bad sizeof_hdr in " + path.string());
    swapped = true;
    swap_header(h);
  }
  if (std::strncmp(h.magic, "n+1", 3) != 0) {
    if (std::strncmp(h.magic, "ni1", 3) == 0)
      throw UnsupportedError("nifti: two-file (.hdr/.img) layout not supported: " + path.string());
    throw FormatError("nifti: bad magic in " + path.string());
  }

  const int ndim = h.dim[0];
  if (ndim < 1 || ndim > 7) throw FormatError("nifti: bad dim[0] in " + path.string());
  int nx = h.dim[1], ny = ndim >= 2 ? h.dim[2] : 1, nz = ndim >= 3 ? h.dim[3] : 1;
  if (nx < 1 || ny < 1 || nz < 1) throw FormatError("nifti: non-positive dimensions in " + path.string());
  for (int d = 4; d <= ndim; ++d)
    if (h.dim[d] > 1) throw UnsupportedError("nifti: >3D volumes not supported: " + path.string());

  std::size_t elem_size;
  switch (h.datatype) {
    case kDtUint8:
      elem_size = 1;
      break;
    case kDtInt16:
      elem_size = 2;
      break;
    case kDtFloat32:
      elem_size = 4;
      break;
    default:
      throw UnsupportedError("nifti: unsupported datatype " + std::to_string(h.datatype) + " in " + path.string());
  }

  double dx = h.pixdim[1], dy = ndim >= 2 ? h.pixdim[2] : 1.0, dz = ndim >= 3 ? h.pixdim[3] : 1.0;
  if (!(dx > 0.0) || !(dy > 0.0) || !(dz > 0.0))
    throw FormatError("nifti: non-positive pixdim in " + path.string());

  const long offset = static_cast<long>(h.vox_offset);
  if (offset < 348) throw FormatError("nifti: vox_offset before end of header in " + path.string());
  std::vector<char> skip(static_cast<std::size_t>(offset) - sizeof(h));
  if (!skip.empty()) read_exact(f.get(), skip.data(), skip.size(), "extensions");

  Volume3D out(nz, ny, nx, {dz, dy, dx});
  std::vector<char> raw(out.size() * elem_size);
  read_exact(f.get(), raw.data(), raw.size(), "voxel payload");

  const bool has_scl = h.scl_slope != 0.0f;
  const double slope = has_scl ? h.scl_slope : 1.0;
  const double inter = has_scl ? h.scl_inter : 0.0;
  switch (h.datatype) {
    case kDtUint8:
      convert_payload<std::uint8_t>(raw, swapped, slope, inter, out);
      break;
    case kDtInt16:
      convert_payload<std::int16_t>(raw, swapped, slope, inter, out);
      break;
    case kDtFloat32:
      convert_payload<float>(raw, swapped, slope, inter, out);
      break;
  }
  for (float v : out.data)
    if (!std::isfinite(v)) throw FormatError("nifti: non-finite intensities in " + path.string());
  return out;
}

void write_volume(const Volume3D& v, const std::filesystem::path& path) {
  if (v.nz < 1 || v.ny < 1 || v.nx < 1) throw DataError("nifti: refusing to write empty volume");

  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(v.nx);
  h.dim[2] = static_cast<std::int16_t>(v.ny);
  h.dim[3] = static_cast<std::int16_t>(v.nz);
  for (int d = 4; d < 8; ++d) h.dim[d] = 1;
  const bool binary = is_binary(v);
  h.datatype = binary ? kDtUint8 : kDtFloat32;
  h.bitpix = binary ? 8 : 32;
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = static_cast<float>(v.spacing[2]);
  h.pixdim[2] = static_cast<float>(v.spacing[1]);
  h.pixdim[3] = static_cast<float>(v.spacing[0]);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.xyzt_units = 2;  // NIFTI_UNITS_MM
  std::strncpy(h.descrip, "followup-ft", sizeof(h.descrip) - 1);
  h.sform_code = 1;
  h.srow_x[0] = static_cast<float>(v.spacing[2]);
  h.srow_y[1] = static_cast<float>(v.spacing[1]);
  h.srow_z[2] = static_cast<float>(v.spacing[0]);
  std::memcpy(h.magic, "n+1", 4);

  std::vector<char> buf;
  buf.reserve(352 + v.size() * (binary ? 1 : 4));
  auto append = [&](const void* p, std::size_t n) {
    buf.insert(buf.end(), static_cast<const char*>(p), static_cast<const char*>(p) + n);
  };
  append(&h, sizeof(h));
  const char extender[4] = {0, 0, 0, 0};
  append(extender, 4);
  if (binary) {
    std::vector<std::uint8_t> raw(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) raw[i] = v.data[i] != 0.0f ? 1 : 0;
    append(raw.data(), raw.size());
  } else {
    append(v.data.data(), v.size() * sizeof(float));
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("nifti: cannot open for writing: " + path.string());
  if (path.extension() == ".gz") {
    // gzip via raw deflate with a zeroed header so identical volumes produce
    // identical bytes across runs
    z_stream zs{};
    if (deflateInit2(&zs, 6, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
      throw IoError("nifti: deflate init failed");
    gz_header gzh{};
    gzh.os = 255;
    deflateSetHeader(&zs, &gzh);
    std::vector<char> comp(deflateBound(&zs, static_cast<uLong>(buf.size())) + 32);
    zs.next_in = reinterpret_cast<Bytef*>(buf.data());
    zs.avail_in = static_cast<uInt>(buf.size());
    zs.next_out = reinterpret_cast<Bytef*>(comp.data());
    zs.avail_out = static_cast<uInt>(comp.size());
    const int rc = deflate(&zs, Z_FINISH);
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) throw IoError("nifti: compression failed for " + path.string());
    out.write(comp.data(), static_cast<std::streamsize>(comp.size() - zs.avail_out));
  } else {
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw IoError("nifti: short write to " + path.string());
}

}  // namespace followup
