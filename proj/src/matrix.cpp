#include "subdistill/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "subdistill/errors.hpp"

namespace subdistill {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("ragged initializer for Matrix");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_row(std::span<const double> row) {
  Matrix m(1, row.size());
  std::copy(row.begin(), row.end(), m.data_.begin());
  return m;
}

Matrix Matrix::from_column(std::span<const double> column) {
  Matrix m(column.size(), 1);
  std::copy(column.begin(), column.end(), m.data_.begin());
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

Matrix& Matrix::operator+=(const Matrix& other) {
  if (rows_ != other.rows_ || cols_ != other.cols_)
    throw DimensionError("matrix addition shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  if (rows_ != other.rows_ || cols_ != other.cols_)
    throw DimensionError("matrix subtraction shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& x : data_) x *= s;
  return *this;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

double Matrix::frobenius_norm() const {
  double s = 0.0;
  for (double x : data_) s += x * x;
  return std::sqrt(s);
}

double Matrix::max_abs() const {
  double m = 0.0;
  for (double x : data_) m = std::max(m, std::abs(x));
  return m;
}

std::vector<double> Matrix::column_means() const {
  std::vector<double> mu(cols_, 0.0);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) mu[j] += (*this)(i, j);
  if (rows_ > 0)
    for (double& m : mu) m /= static_cast<double>(rows_);
  return mu;
}

Matrix Matrix::centered_rows() const {
  Matrix out = *this;
  out.subtract_row_vector(column_means());
  return out;
}

void Matrix::add_row_vector(std::span<const double> v) {
  if (v.size() != cols_) throw DimensionError("row vector length mismatch");
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) (*this)(i, j) += v[j];
}

void Matrix::subtract_row_vector(std::span<const double> v) {
  if (v.size() != cols_) throw DimensionError("row vector length mismatch");
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) (*this)(i, j) -= v[j];
}

Matrix Matrix::selected_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows_) throw DimensionError("row index out of range");
    std::copy_n(row(indices[i]).data(), cols_, out.row(i).data());
  }
  return out;
}

Matrix Matrix::selected_cols(std::span<const std::size_t> indices) const {
  Matrix out(rows_, indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j)
    if (indices[j] >= cols_) throw DimensionError("column index out of range");
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < indices.size(); ++j) out(i, j) = (*this)(i, indices[j]);
  return out;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul shape mismatch");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* bk = b.row(k).data();
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Matrix operator+(Matrix a, const Matrix& b) {
  a += b;
  return a;
}

Matrix operator-(Matrix a, const Matrix& b) {
  a -= b;
  return a;
}

Matrix operator*(double s, Matrix a) {
  a *= s;
  return a;
}

Matrix at_b(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw DimensionError("at_b shape mismatch");
  Matrix c(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i).data();
    const double* bi = b.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      double v = ai[k];
      if (v == 0.0) continue;
      double* ck = c.row(k).data();
      for (std::size_t j = 0; j < b.cols(); ++j) ck[j] += v * bi[j];
    }
  }
  return c;
}

Matrix a_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw DimensionError("a_bt shape mismatch");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = dot(a.row(i), b.row(j));
  return c;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.flat().size(); ++i)
    m = std::max(m, std::abs(a.flat()[i] - b.flat()[i]));
  return m;
}

namespace {

void put_u32le(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void put_f64le(std::ostream& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

std::uint32_t get_u32le(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(std::string("truncated SDMX block while reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64le(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw FormatError("truncated SDMX block while reading values");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace

void write_sdmx(const Matrix& m, std::ostream& out) {
  out.write("SDMX", 4);
  put_u32le(out, static_cast<std::uint32_t>(m.rows()));
  put_u32le(out, static_cast<std::uint32_t>(m.cols()));
  for (double x : m.flat()) put_f64le(out, x);
}

void write_sdmx(const Matrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  write_sdmx(m, out);
  if (!out) throw IoError("write failed: " + path.string());
}

Matrix read_sdmx(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("truncated SDMX block while reading magic");
  if (std::memcmp(magic, "SDMX", 4) != 0)
    throw FormatError("bad SDMX magic at byte offset 0");
  std::uint32_t rows = get_u32le(in, "rows");
  std::uint32_t cols = get_u32le(in, "cols");
  Matrix m(rows, cols);
  for (double& x : m.flat()) x = get_f64le(in);
  return m;
}

Matrix read_sdmx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  return read_sdmx(in);
}

}  // namespace subdistill
