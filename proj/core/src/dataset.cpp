#include "volflow/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "volflow/io.hpp"
#include "volflow/threading.hpp"

namespace fs = std::filesystem;

namespace volflow {

void write_latent_volume(const std::string& path, const std::vector<LatentSlice>& latents,
                         uint64_t codec_seed) {
  if (latents.empty()) throw_usage("write_latent_volume: empty volume");
  BinWriter w(path);
  w.magic("CTFL");
  w.u32(1);
  w.u64(codec_seed);
  w.u32(4);
  w.u32(static_cast<uint32_t>(latents.size()));
  w.u32(LatentSlice::kChannels);
  w.u32(static_cast<uint32_t>(latents[0].height));
  w.u32(static_cast<uint32_t>(latents[0].width));
  w.u8(0);  // float32
  for (const auto& s : latents) {
    if (s.height != latents[0].height || s.width != latents[0].width)
      throw_shape("write_latent_volume: ragged latent slices");
    w.f32_array(s.values);
  }
}

std::vector<LatentSlice> read_latent_volume(const std::string& path, uint64_t* codec_seed_out) {
  BinReader r(path);
  r.expect_magic("CTFL");
  uint32_t version = r.u32();
  if (version != 1)
    throw_data("unsupported latent cache version " + std::to_string(version) + " in " + path);
  uint64_t codec_seed = r.u64();
  if (codec_seed_out) *codec_seed_out = codec_seed;
  uint32_t ndim = r.u32();
  if (ndim != 4) throw_data("latent cache must be 4-d, got ndim=" + std::to_string(ndim));
  uint32_t n = r.u32(), c = r.u32(), h = r.u32(), w = r.u32();
  if (c != LatentSlice::kChannels)
    throw_data("latent cache channel count " + std::to_string(c) + " != 16");
  uint8_t dtype = r.u8();
  if (dtype != 0) throw_data("latent cache dtype must be float32");
  std::vector<LatentSlice> out;
  out.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    LatentSlice s(static_cast<int>(h), static_cast<int>(w));
    r.f32_array(s.values, s.values.size());
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<double> calibrate_channel_scale(const CodecBasis& unscaled_basis) {
  constexpr uint64_t kScaleSeed = 0x5CA1EULL;
  constexpr int kCount = 48;
  std::vector<double> sum(CodecBasis::kKeptRows, 0.0), sumsq(CodecBasis::kKeptRows, 0.0);
  int64_t n_px = 0;
  for (int i = 0; i < kCount; ++i) {
    Rng rng = Rng::derive(kScaleSeed, static_cast<uint64_t>(i));
    PhantomSpec spec;
    spec.resolution = 64;
    spec.length_slices = static_cast<int>(rng.uniform_int(32, 128));
    spec.findings = {static_cast<int>(rng.uniform_int(0, kNumFindings - 1))};
    spec.seed = rng.next_u64();
    Volume vol = generate_phantom(spec);
    for (const auto& img : vol.slices) {
      LatentSlice lat = encode_slice(img, unscaled_basis);
      for (int c = 0; c < CodecBasis::kKeptRows; ++c)
        for (int y = 0; y < lat.height; ++y)
          for (int x = 0; x < lat.width; ++x) {
            double v = lat.at(c, y, x);
            sum[static_cast<size_t>(c)] += v;
            sumsq[static_cast<size_t>(c)] += v * v;
          }
      n_px += static_cast<int64_t>(lat.height) * lat.width;
    }
  }
  std::vector<double> scale(CodecBasis::kKeptRows);
  for (int c = 0; c < CodecBasis::kKeptRows; ++c) {
    double mu = sum[static_cast<size_t>(c)] / static_cast<double>(n_px);
    double var = sumsq[static_cast<size_t>(c)] / static_cast<double>(n_px) - mu * mu;
    scale[static_cast<size_t>(c)] = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
  }
  return scale;
}

namespace {

std::string volume_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "volume_%04d.ctfl", index);
  return buf;
}

Report draw_report(uint64_t dataset_seed, int index, int min_len, int max_len) {
  Rng rng = Rng::derive(dataset_seed, 0x0DA7AULL + static_cast<uint64_t>(index));
  Report rep;
  rep.length_slices = static_cast<int>(rng.uniform_int(min_len, max_len));
  rep.findings = {static_cast<int>(rng.uniform_int(0, kNumFindings - 1))};
  return rep;
}

uint64_t volume_seed(uint64_t dataset_seed, int index) {
  return Rng::derive(dataset_seed, 0x70115ULL + static_cast<uint64_t>(index)).next_u64();
}

std::string join_findings(const Report& r) {
  std::string out;
  for (size_t i = 0; i < r.findings.size(); ++i) {
    if (i) out += ",";
    out += kFindingVocabulary[static_cast<size_t>(r.findings[i])];
  }
  return out;
}

}  // namespace

void build_dataset(const BuildDatasetOptions& opts) {
  if (opts.n_volumes < 1) throw_usage("build_dataset: need at least one volume");
  if (opts.min_length < 32 || opts.max_length > 128 || opts.min_length > opts.max_length)
    throw_value("build_dataset: lengths must satisfy 32 <= min <= max <= 128");
  if (opts.resolution % 8 != 0 || opts.resolution <= 0)
    throw_value("build_dataset: resolution must be a positive multiple of 8");

  fs::path dir(opts.out_dir);
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw_data("output path is not a directory: " + opts.out_dir);
    if (!fs::is_empty(dir) && !opts.force)
      throw_data("output directory not empty (use --force): " + opts.out_dir);
  } else {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw_io("cannot create directory " + opts.out_dir + ": " + ec.message());
  }

  CodecBasis basis = build_basis(opts.codec_seed);
  basis.channel_scale = calibrate_channel_scale(basis);
  ProbeCalibration probe = calibrate_probes();

  std::vector<Report> reports(static_cast<size_t>(opts.n_volumes));
  for (int i = 0; i < opts.n_volumes; ++i)
    reports[static_cast<size_t>(i)] = draw_report(opts.seed, i, opts.min_length, opts.max_length);

  parallel_for(opts.n_volumes, opts.threads, [&](int64_t i) {
    PhantomSpec spec;
    spec.resolution = opts.resolution;
    spec.length_slices = reports[static_cast<size_t>(i)].length_slices;
    spec.findings = reports[static_cast<size_t>(i)].findings;
    spec.seed = volume_seed(opts.seed, static_cast<int>(i));
    Volume vol = generate_phantom(spec);
    std::vector<LatentSlice> latents = encode_volume(vol.slices, basis);
    write_latent_volume((dir / volume_file_name(static_cast<int>(i))).string(), latents,
                        opts.codec_seed);
  });

  {
    std::ofstream manifest(dir / "manifest.tsv");
    std::ofstream report_lines(dir / "reports.txt");
    if (!manifest || !report_lines) throw_io("cannot write manifest in " + opts.out_dir);
    for (int i = 0; i < opts.n_volumes; ++i) {
      const Report& r = reports[static_cast<size_t>(i)];
      char id[16];
      std::snprintf(id, sizeof(id), "vol%04d", i);
      std::string text = render_report(r);
      manifest << id << '\t' << r.length_slices << '\t' << join_findings(r) << '\t'
               << volume_file_name(i) << '\t' << text << '\n';
      report_lines << text << '\n';
    }
  }

  {
    BinWriter w((dir / "embeddings.bin").string());
    w.magic("CTEM");
    w.u32(1);
    w.u64(static_cast<uint64_t>(opts.n_volumes));
    w.u32(TextEmbedding::kDim);
    for (int i = 0; i < opts.n_volumes; ++i) {
      TextEmbedding emb = embed_report(reports[static_cast<size_t>(i)], opts.embed_seed);
      w.f32_array(emb.vector);
      w.u64(emb.source_hash);
    }
  }

  {
    std::ofstream calib(dir / "calibration.txt");
    if (!calib) throw_io("cannot write calibration.txt in " + opts.out_dir);
    calib << "calib_version=1\n";
    calib << "channel_scale=";
    for (int c = 0; c < CodecBasis::kKeptRows; ++c)
      calib << (c ? "," : "") << fmt_double(basis.channel_scale[static_cast<size_t>(c)], 12);
    calib << "\nprobe_neg=";
    for (int c = 0; c < 7; ++c) calib << (c ? "," : "") << fmt_double(probe.neg_mean[static_cast<size_t>(c)], 12);
    calib << "\nprobe_pos=";
    for (int c = 0; c < 7; ++c) calib << (c ? "," : "") << fmt_double(probe.pos_mean[static_cast<size_t>(c)], 12);
    calib << "\nis_temperature=" << fmt_double(probe.is_temperature, 12) << "\n";
    calib << "feature_seed=" << opts.feature_seed << "\n";
  }

  {
    std::ofstream meta(dir / "dataset.meta");
    if (!meta) throw_io("cannot write dataset.meta in " + opts.out_dir);
    meta << "version=1\n";
    meta << "n_volumes=" << opts.n_volumes << "\n";
    meta << "seed=" << opts.seed << "\n";
    meta << "codec_seed=" << opts.codec_seed << "\n";
    meta << "embed_seed=" << opts.embed_seed << "\n";
    meta << "resolution=" << opts.resolution << "\n";
    meta << "min_length=" << opts.min_length << "\n";
    meta << "max_length=" << opts.max_length << "\n";
  }
}

namespace {

std::map<std::string, std::string> read_kv_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("missing file: " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) throw_parse("malformed line in " + path.string() + ": " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::vector<double> parse_csv_doubles(const std::string& s, size_t expect, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  if (out.size() != expect)
    throw_parse(std::string("expected ") + std::to_string(expect) + " values for " + what);
  return out;
}

}  // namespace

PhantomSpec Dataset::phantom_spec(size_t index) const {
  if (index >= records.size()) throw_usage("phantom_spec: index out of range");
  PhantomSpec spec;
  spec.resolution = resolution;
  spec.length_slices = records[index].length;
  spec.findings = records[index].report.findings;
  spec.seed = volume_seed(seed, static_cast<int>(index));
  return spec;
}

Dataset load_dataset(const std::string& dir_in, bool load_latents) {
  fs::path dir(dir_in);
  if (!fs::is_directory(dir)) throw_data("dataset directory not found: " + dir_in);

  Dataset ds;
  ds.dir = dir_in;
  auto meta = read_kv_file(dir / "dataset.meta");
  ds.seed = std::stoull(meta.at("seed"));
  ds.codec_seed = std::stoull(meta.at("codec_seed"));
  ds.embed_seed = std::stoull(meta.at("embed_seed"));
  ds.resolution = std::stoi(meta.at("resolution"));
  ds.min_length = std::stoi(meta.at("min_length"));
  ds.max_length = std::stoi(meta.at("max_length"));
  ds.latent_h = ds.resolution / 8;
  ds.latent_w = ds.resolution / 8;

  auto calib = read_kv_file(dir / "calibration.txt");
  ds.feature_seed = std::stoull(calib.at("feature_seed"));
  std::vector<double> cs = parse_csv_doubles(calib.at("channel_scale"), CodecBasis::kKeptRows,
                                             "channel_scale");
  std::vector<double> pn = parse_csv_doubles(calib.at("probe_neg"), 7, "probe_neg");
  std::vector<double> pp = parse_csv_doubles(calib.at("probe_pos"), 7, "probe_pos");
  for (int c = 0; c < 7; ++c) {
    ds.probe_calib.neg_mean[static_cast<size_t>(c)] = pn[static_cast<size_t>(c)];
    ds.probe_calib.pos_mean[static_cast<size_t>(c)] = pp[static_cast<size_t>(c)];
  }
  ds.probe_calib.is_temperature = std::stod(calib.at("is_temperature"));

  ds.basis = build_basis(ds.codec_seed);
  ds.basis.channel_scale = cs;
  ds.sentinels = sentinel_slices(ds.basis, ds.latent_h, ds.latent_w);

  std::ifstream manifest(dir / "manifest.tsv");
  if (!manifest) throw_data("missing manifest.tsv in " + dir_in);
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    DatasetRecord rec;
    std::string length_s, findings_s;
    if (!std::getline(ss, rec.id, '\t') || !std::getline(ss, length_s, '\t') ||
        !std::getline(ss, findings_s, '\t') || !std::getline(ss, rec.latent_file, '\t'))
      throw_parse("malformed manifest line: " + line);
    std::string report_text;
    std::getline(ss, report_text);
    rec.length = std::stoi(length_s);
    rec.report = parse_report(report_text);
    if (rec.report.length_slices != rec.length)
      throw_data("manifest length disagrees with report for " + rec.id);
    ds.records.push_back(std::move(rec));
  }

  {
    BinReader r((dir / "embeddings.bin").string());
    r.expect_magic("CTEM");
    if (r.u32() != 1) throw_data("unsupported embeddings version");
    uint64_t count = r.u64();
    uint32_t dim = r.u32();
    if (count != ds.records.size() || dim != TextEmbedding::kDim)
      throw_data("embeddings.bin does not match the manifest");
    for (uint64_t i = 0; i < count; ++i) {
      TextEmbedding emb;
      r.f32_array(emb.vector, TextEmbedding::kDim);
      emb.source_hash = r.u64();
      ds.embeddings.push_back(std::move(emb));
    }
  }

  if (load_latents) {
    ds.latents.resize(ds.records.size());
    for (size_t i = 0; i < ds.records.size(); ++i) {
      uint64_t file_seed = 0;
      ds.latents[i] = read_latent_volume((dir / ds.records[i].latent_file).string(), &file_seed);
      if (file_seed != ds.codec_seed)
        throw_data("latent file codec seed mismatch for " + ds.records[i].id);
      if (static_cast<int>(ds.latents[i].size()) != ds.records[i].length)
        throw_data("latent length mismatch for " + ds.records[i].id);
    }
  }
  return ds;
}

}  // namespace volflow
