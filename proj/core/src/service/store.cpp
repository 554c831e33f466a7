#include "tumorkit/service/store.hpp"

#include <fcntl.h>
#include <sqlite3.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>

#include <fmt/format.h>

#include "tumorkit/digest.hpp"
#include "tumorkit/error.hpp"

namespace tumorkit::service {
namespace {

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS patients (
  seq INTEGER PRIMARY KEY AUTOINCREMENT,
  patient_id TEXT NOT NULL UNIQUE,
  display_name TEXT NOT NULL,
  created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS scans (
  seq INTEGER PRIMARY KEY AUTOINCREMENT,
  scan_id TEXT NOT NULL UNIQUE,
  patient_id TEXT NOT NULL REFERENCES patients(patient_id),
  payload_sha256 TEXT NOT NULL,
  blob_ref TEXT NOT NULL,
  content_type TEXT NOT NULL,
  height INTEGER NOT NULL,
  width INTEGER NOT NULL,
  uploaded_at TEXT NOT NULL,
  UNIQUE (patient_id, payload_sha256)
);
CREATE TABLE IF NOT EXISTS classifications (
  scan_id TEXT PRIMARY KEY REFERENCES scans(scan_id),
  predicted_class TEXT NOT NULL,
  confidence REAL NOT NULL,
  p_glioma REAL NOT NULL,
  p_meningioma REAL NOT NULL,
  p_pituitary REAL NOT NULL,
  p_no_tumor REAL NOT NULL,
  latency_ms INTEGER NOT NULL,
  model_digest TEXT NOT NULL,
  created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS segmentations (
  scan_id TEXT PRIMARY KEY REFERENCES scans(scan_id),
  mask_ref TEXT NOT NULL,
  mask_height INTEGER NOT NULL,
  mask_width INTEGER NOT NULL,
  latency_ms INTEGER NOT NULL,
  model_digest TEXT NOT NULL,
  created_at TEXT NOT NULL
);
)sql";

[[noreturn]] void fail(sqlite3* db, const std::string& what) {
  throw std::runtime_error(what + ": " + (db ? sqlite3_errmsg(db) : "sqlite error"));
}

class Stmt {
 public:
  Stmt(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &s_, nullptr) != SQLITE_OK) fail(db, "prepare failed");
  }
  ~Stmt() { sqlite3_finalize(s_); }
  Stmt(const Stmt&) = delete;
  Stmt& operator=(const Stmt&) = delete;

  Stmt& bind(int i, const std::string& v) {
    check(sqlite3_bind_text(s_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
    return *this;
  }
  Stmt& bind(int i, std::int64_t v) {
    check(sqlite3_bind_int64(s_, i, v));
    return *this;
  }
  Stmt& bind(int i, int v) { return bind(i, static_cast<std::int64_t>(v)); }
  Stmt& bind(int i, double v) {
    check(sqlite3_bind_double(s_, i, v));
    return *this;
  }

  // True while rows remain.
  bool step() {
    const int rc = sqlite3_step(s_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    if ((rc & 0xff) == SQLITE_CONSTRAINT) throw StoreConflict(sqlite3_errmsg(db_));
    fail(db_, "step failed");
  }
  void run() {
    while (step()) {
    }
  }

  std::string text(int col) const {
    const auto* p = sqlite3_column_text(s_, col);
    return p ? std::string(reinterpret_cast<const char*>(p), static_cast<std::size_t>(sqlite3_column_bytes(s_, col)))
             : std::string();
  }
  std::int64_t i64(int col) const { return sqlite3_column_int64(s_, col); }
  double f64(int col) const { return sqlite3_column_double(s_, col); }

 private:
  void check(int rc) const {
    if (rc != SQLITE_OK) fail(db_, "bind failed");
  }
  sqlite3* db_;
  sqlite3_stmt* s_ = nullptr;
};

void exec(sqlite3* db, const char* sql) {
  char* err = nullptr;
  if (sqlite3_exec(db, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err ? err : "exec failed";
    sqlite3_free(err);
    throw std::runtime_error(msg);
  }
}

// Commits on commit(), rolls back otherwise.
class Transaction {
 public:
  explicit Transaction(sqlite3* db) : db_(db) { exec(db_, "BEGIN IMMEDIATE"); }
  ~Transaction() {
    if (!done_) sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
  }
  void commit() {
    exec(db_, "COMMIT");
    done_ = true;
  }

 private:
  sqlite3* db_;
  bool done_ = false;
};

void fsync_path(const std::filesystem::path& p, int flags) {
  const int fd = ::open(p.c_str(), flags);
  if (fd < 0) throw std::runtime_error("cannot open '" + p.string() + "': " + std::strerror(errno));
  const int rc = ::fsync(fd);
  ::close(fd);
  if (rc != 0) throw std::runtime_error("fsync '" + p.string() + "' failed: " + std::strerror(errno));
}

// Durable replace: write temp, fsync, rename, fsync directory.
void write_durable(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw std::runtime_error("cannot create '" + tmp.string() + "': " + std::strerror(errno));
  std::size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + off, bytes.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      throw std::runtime_error("write '" + tmp.string() + "' failed: " + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    throw std::runtime_error("fsync '" + tmp.string() + "' failed");
  }
  ::close(fd);
  std::filesystem::rename(tmp, path);
  fsync_path(path.parent_path(), O_RDONLY | O_DIRECTORY);
}

TumorClass class_or_throw(const std::string& s) {
  auto c = parse_tumor_class(s);
  if (!c) throw std::runtime_error("store holds unknown class '" + s + "'");
  return *c;
}

constexpr const char* kScanColumns =
    "s.scan_id, s.patient_id, s.blob_ref, s.payload_sha256, s.content_type, s.height, s.width, s.uploaded_at, "
    "c.predicted_class, c.confidence, c.p_glioma, c.p_meningioma, c.p_pituitary, c.p_no_tumor, c.latency_ms, "
    "c.model_digest, c.created_at, g.mask_ref, g.mask_height, g.mask_width, g.latency_ms, g.model_digest, "
    "g.created_at, c.scan_id IS NOT NULL, g.scan_id IS NOT NULL";

std::string scan_query(const char* where) {
  return fmt::format(
      "SELECT {} FROM scans s LEFT JOIN classifications c ON c.scan_id = s.scan_id "
      "LEFT JOIN segmentations g ON g.scan_id = s.scan_id WHERE {} ORDER BY s.seq",
      kScanColumns, where);
}

StoredScan scan_from_row(const Stmt& st) {
  StoredScan s;
  s.scan_id = st.text(0);
  s.patient_id = st.text(1);
  s.blob_ref = st.text(2);
  s.payload_sha256 = st.text(3);
  s.content_type = st.text(4);
  s.height = static_cast<int>(st.i64(5));
  s.width = static_cast<int>(st.i64(6));
  s.uploaded_at = st.text(7);
  if (st.i64(23) != 0) {
    ClassificationResult c;
    c.predicted_class = class_or_throw(st.text(8));
    c.confidence = st.f64(9);
    for (int i = 0; i < kNumClasses; ++i) c.probabilities[static_cast<std::size_t>(i)] = st.f64(10 + i);
    c.latency_ms = st.i64(14);
    c.model_digest = st.text(15);
    c.created_at = st.text(16);
    s.classification = c;
  }
  if (st.i64(24) != 0) {
    SegmentationResult g;
    g.mask_ref = st.text(17);
    g.mask_height = static_cast<int>(st.i64(18));
    g.mask_width = static_cast<int>(st.i64(19));
    g.latency_ms = st.i64(20);
    g.model_digest = st.text(21);
    g.created_at = st.text(22);
    s.segmentation = g;
  }
  return s;
}

bool safe_ref(const std::string& ref) {
  if (ref.empty() || ref.front() == '/') return false;
  for (const auto& part : std::filesystem::path(ref)) {
    if (part == "..") return false;
  }
  return true;
}

}  // namespace

struct Store::Db {
  sqlite3* handle = nullptr;
  ~Db() { sqlite3_close(handle); }
};

Store::Store(const std::filesystem::path& root) : root_(root), db_(std::make_unique<Db>()) {
  std::filesystem::create_directories(root_ / "blobs");
  std::filesystem::create_directories(root_ / "masks");
  const auto db_path = root_ / "store.sqlite3";
  if (sqlite3_open_v2(db_path.c_str(), &db_->handle, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_NOMUTEX,
                      nullptr) != SQLITE_OK) {
    fail(db_->handle, "cannot open store '" + db_path.string() + "'");
  }
  sqlite3_busy_timeout(db_->handle, 5000);
  exec(db_->handle, "PRAGMA journal_mode=WAL; PRAGMA synchronous=FULL; PRAGMA foreign_keys=ON;");
  exec(db_->handle, kSchema);
}

Store::~Store() = default;

PatientRecord Store::create_patient(const std::string& patient_id, const std::string& display_name) {
  std::lock_guard lock(mu_);
  Transaction tx(db_->handle);
  std::string id = patient_id;
  if (id.empty()) {
    Stmt next(db_->handle, "SELECT COALESCE(MAX(seq), 0) FROM patients");
    next.step();
    for (std::int64_t n = next.i64(0) + 1;; ++n) {
      id = fmt::format("P{:06d}", n);
      Stmt exists(db_->handle, "SELECT 1 FROM patients WHERE patient_id = ?");
      exists.bind(1, id);
      if (!exists.step()) break;
    }
  } else {
    Stmt exists(db_->handle, "SELECT 1 FROM patients WHERE patient_id = ?");
    exists.bind(1, id);
    if (exists.step()) throw StoreConflict("patient '" + id + "' already exists");
  }
  PatientRecord rec{id, display_name, utc_timestamp_now(), {}};
  Stmt ins(db_->handle, "INSERT INTO patients (patient_id, display_name, created_at) VALUES (?, ?, ?)");
  ins.bind(1, rec.patient_id).bind(2, rec.display_name).bind(3, rec.created_at).run();
  tx.commit();
  return rec;
}

std::optional<PatientRecord> Store::patient(const std::string& patient_id) const {
  std::lock_guard lock(mu_);
  Stmt st(db_->handle, "SELECT patient_id, display_name, created_at FROM patients WHERE patient_id = ?");
  st.bind(1, patient_id);
  if (!st.step()) return std::nullopt;
  PatientRecord rec{st.text(0), st.text(1), st.text(2), {}};
  Stmt scans(db_->handle, "SELECT scan_id FROM scans WHERE patient_id = ? ORDER BY seq");
  scans.bind(1, patient_id);
  while (scans.step()) rec.scan_ids.push_back(scans.text(0));
  return rec;
}

PutScanResult Store::put_scan(const std::string& patient_id, std::span<const std::uint8_t> payload,
                              const std::string& content_type, int height, int width) {
  const std::string digest = sha256_hex(payload);
  const std::string scan_id = scan_id_for(patient_id, digest);
  std::lock_guard lock(mu_);
  if (auto existing = find_scan_locked(scan_id)) return {std::move(*existing), false};
  {
    Stmt st(db_->handle, "SELECT 1 FROM patients WHERE patient_id = ?");
    st.bind(1, patient_id);
    if (!st.step()) throw DataError("unknown patient '" + patient_id + "'");
  }
  const std::string ref = "blobs/" + digest.substr(0, 2) + "/" + digest;
  if (!std::filesystem::exists(root_ / ref)) write_durable(root_ / ref, payload);
  Transaction tx(db_->handle);
  Stmt ins(db_->handle,
           "INSERT INTO scans (scan_id, patient_id, payload_sha256, blob_ref, content_type, height, width, uploaded_at) "
           "VALUES (?, ?, ?, ?, ?, ?, ?, ?)");
  ins.bind(1, scan_id)
      .bind(2, patient_id)
      .bind(3, digest)
      .bind(4, ref)
      .bind(5, content_type)
      .bind(6, height)
      .bind(7, width)
      .bind(8, utc_timestamp_now())
      .run();
  tx.commit();
  return {load_scan_locked(scan_id), true};
}

std::optional<StoredScan> Store::scan(const std::string& scan_id) const {
  std::lock_guard lock(mu_);
  return find_scan_locked(scan_id);
}

std::vector<StoredScan> Store::scans_for(const std::string& patient_id) const {
  std::lock_guard lock(mu_);
  Stmt st(db_->handle, scan_query("s.patient_id = ?").c_str());
  st.bind(1, patient_id);
  std::vector<StoredScan> out;
  while (st.step()) out.push_back(scan_from_row(st));
  return out;
}

void Store::save_classification(const std::string& scan_id, const ClassificationResult& r) {
  std::lock_guard lock(mu_);
  Transaction tx(db_->handle);
  Stmt st(db_->handle,
          "INSERT OR REPLACE INTO classifications (scan_id, predicted_class, confidence, p_glioma, p_meningioma, "
          "p_pituitary, p_no_tumor, latency_ms, model_digest, created_at) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)");
  st.bind(1, scan_id).bind(2, std::string(to_string(r.predicted_class))).bind(3, r.confidence);
  for (int i = 0; i < kNumClasses; ++i) st.bind(4 + i, r.probabilities[static_cast<std::size_t>(i)]);
  st.bind(8, r.latency_ms).bind(9, r.model_digest).bind(10, r.created_at).run();
  tx.commit();
}

SegmentationResult Store::save_segmentation(const std::string& scan_id, SegmentationResult r,
                                            std::span<const std::uint8_t> mask_png) {
  std::lock_guard lock(mu_);
  r.mask_ref = "masks/" + scan_id + ".png";
  write_durable(root_ / r.mask_ref, mask_png);
  Transaction tx(db_->handle);
  Stmt st(db_->handle,
          "INSERT OR REPLACE INTO segmentations (scan_id, mask_ref, mask_height, mask_width, latency_ms, "
          "model_digest, created_at) VALUES (?, ?, ?, ?, ?, ?, ?)");
  st.bind(1, scan_id)
      .bind(2, r.mask_ref)
      .bind(3, r.mask_height)
      .bind(4, r.mask_width)
      .bind(5, r.latency_ms)
      .bind(6, r.model_digest)
      .bind(7, r.created_at)
      .run();
  tx.commit();
  return r;
}

std::vector<std::uint8_t> Store::read_blob(const std::string& ref) const {
  if (!safe_ref(ref)) throw std::runtime_error("invalid blob reference '" + ref + "'");
  const int fd = ::open((root_ / ref).c_str(), O_RDONLY);
  if (fd < 0) throw std::runtime_error("blob '" + ref + "' is missing");
  std::vector<std::uint8_t> out;
  std::uint8_t buf[65536];
  for (;;) {
    const ssize_t n = ::read(fd, buf, sizeof buf);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    out.insert(out.end(), buf, buf + n);
  }
  ::close(fd);
  return out;
}

std::optional<StoredScan> Store::find_scan_locked(const std::string& scan_id) const {
  Stmt st(db_->handle, scan_query("s.scan_id = ?").c_str());
  st.bind(1, scan_id);
  if (!st.step()) return std::nullopt;
  return scan_from_row(st);
}

StoredScan Store::load_scan_locked(const std::string& scan_id) const {
  auto s = find_scan_locked(scan_id);
  if (!s) throw std::runtime_error("scan '" + scan_id + "' vanished");
  return std::move(*s);
}

std::string scan_id_for(const std::string& patient_id, const std::string& payload_sha256) {
  return "S" + sha256_hex(patient_id + "\n" + payload_sha256).substr(0, 20);
}

std::string utc_timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  return fmt::format("{}.{:03d}Z", buf, static_cast<int>(ms));
}

}  // namespace tumorkit::service
