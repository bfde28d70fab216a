/** Corpus conversion into the engine's dataset format.
 *
 * Mock mode synthesizes deterministic features with no model or network
 * I/O; real mode delegates to pluggable extractor backends and pairs
 * detected faces with detected objects by bounding-box overlap.
 */

import fs from "fs";
import path from "path";

import { buildFacePrompt } from "./facePrompt";
import { streamFor } from "./rng";
import {
  DetectedFace,
  DetectedObject,
  EntityDumpRecord,
  ExportManifest,
  ExportReport,
  ExtractorBackends,
  RawRecord,
  RecordReport,
} from "./types";

export const ANP_VOCAB = [
  "nice clouds", "white dress", "happy man", "blue sky", "old building",
  "green field", "dark street", "bright lights", "calm water", "red curtain",
];

const GENDERS = ["male", "female"];
const RACES = ["white", "black", "asian", "latino"];
const EMOTIONS = ["neutral", "happy", "serious", "calm"];

export class ExportError extends Error {}

export function loadManifest(manifestPath: string): ExportManifest {
  let raw: string;
  try {
    raw = fs.readFileSync(manifestPath, "utf-8");
  } catch (e) {
    throw new ExportError(`cannot read manifest ${manifestPath}: ${e}`);
  }
  const m = JSON.parse(raw) as ExportManifest;
  if (!Array.isArray(m.records) || !m.entity_dump || !m.dims) {
    throw new ExportError("manifest needs records, entity_dump and dims");
  }
  const seen = new Set<string>();
  for (const r of m.records) {
    if (seen.has(r.sample_id)) {
      throw new ExportError(`duplicate sample_id ${r.sample_id} in manifest`);
    }
    seen.add(r.sample_id);
  }
  return m;
}

export function loadEntityDump(dumpPath: string): EntityDumpRecord[] {
  let raw: string;
  try {
    raw = fs.readFileSync(dumpPath, "utf-8");
  } catch (e) {
    throw new ExportError(`cannot read entity dump ${dumpPath}: ${e}`);
  }
  return raw
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line, i) => {
      try {
        return JSON.parse(line) as EntityDumpRecord;
      } catch (e) {
        throw new ExportError(`entity dump line ${i + 1}: invalid JSON`);
      }
    });
}

function unit(vec: number[]): number[] {
  const norm = Math.sqrt(vec.reduce((acc, x) => acc + x * x, 0)) + 1e-12;
  return vec.map((x) => x / norm);
}

/** Intersection-over-union of two [x, y, w, h] boxes. */
export function iou(
  a: [number, number, number, number],
  b: [number, number, number, number],
): number {
  const x1 = Math.max(a[0], b[0]);
  const y1 = Math.max(a[1], b[1]);
  const x2 = Math.min(a[0] + a[2], b[0] + b[2]);
  const y2 = Math.min(a[1] + a[3], b[1] + b[3]);
  const inter = Math.max(0, x2 - x1) * Math.max(0, y2 - y1);
  const union = a[2] * a[3] + b[2] * b[3] - inter;
  return union > 0 ? inter / union : 0;
}

/** Assign each face to the object with the highest overlap (> 0). */
export function pairFacesToObjects(
  objects: DetectedObject[],
  faces: DetectedFace[],
): (DetectedFace | null)[] {
  const assigned: (DetectedFace | null)[] = objects.map(() => null);
  for (const face of faces) {
    let best = -1;
    let bestIou = 0;
    objects.forEach((obj, i) => {
      const v = iou(obj.bbox, face.bbox);
      if (v > bestIou) {
        bestIou = v;
        best = i;
      }
    });
    if (best >= 0 && assigned[best] === null) assigned[best] = face;
  }
  return assigned;
}

interface SampleObject {
  object_vec: number[];
  face_vec: number[] | null;
}

function mockRecord(
  record: RawRecord,
  dims: ExportManifest["dims"],
  seed: number,
  report: RecordReport,
): { objects: SampleObject[]; anps: string[] } {
  const rng = streamFor(seed, "sample", record.sample_id);
  const nObjects = 1 + rng.nextInt(3);
  const objects: SampleObject[] = [];
  for (let i = 0; i < nObjects; i++) {
    const objRng = streamFor(seed, "obj", record.sample_id, String(i));
    const objectVec = objRng.normalVector(dims.d_obj, 1 / Math.sqrt(dims.d));
    // the first object is the person region: derive face attributes, build
    // the canonical prompt, and encode it deterministically from the prompt
    let faceVec: number[] | null = null;
    if (i === 0) {
      const attrs: Record<string, string> = {
        gender: GENDERS[rng.nextInt(GENDERS.length)],
        race: RACES[rng.nextInt(RACES.length)],
        age: String(20 + rng.nextInt(50)),
        emotion: EMOTIONS[rng.nextInt(EMOTIONS.length)],
      };
      const prompt = buildFacePrompt(record.mention, attrs);
      report.face_prompts.push(prompt);
      faceVec = streamFor(seed, "prompt", prompt)
        .normalVector(dims.d_face, 1 / Math.sqrt(dims.d));
    }
    objects.push({ object_vec: objectVec, face_vec: faceVec });
  }
  const nAnps = 1 + rng.nextInt(3);
  const anps: string[] = [];
  while (anps.length < nAnps) {
    const pick = ANP_VOCAB[rng.nextInt(ANP_VOCAB.length)];
    if (!anps.includes(pick)) anps.push(pick);
  }
  return { objects, anps };
}

async function realRecord(
  record: RawRecord,
  dims: ExportManifest["dims"],
  backends: ExtractorBackends,
  report: RecordReport,
): Promise<{ objects: SampleObject[]; anps: string[] }> {
  if (!record.image_path || !fs.existsSync(record.image_path)) {
    report.warnings.push(`image missing: ${record.image_path ?? "(none)"}`);
    return { objects: [], anps: [] };
  }
  const detected = await backends.detectObjects(record.image_path);
  for (const obj of detected) {
    if (obj.vec.length !== dims.d_obj) {
      throw new ExportError(
        `${record.sample_id}: object vector dim ${obj.vec.length} != ${dims.d_obj}`,
      );
    }
  }
  const faces = await backends.detectFaces(record.image_path);
  const paired = pairFacesToObjects(detected, faces);
  const objects: SampleObject[] = [];
  for (let i = 0; i < detected.length; i++) {
    const face = paired[i];
    let faceVec: number[] | null = null;
    if (face) {
      const prompt = buildFacePrompt(record.mention, face.attrs);
      report.face_prompts.push(prompt);
      faceVec = await backends.encodePrompt(prompt);
      if (faceVec.length !== dims.d_face) {
        throw new ExportError(
          `${record.sample_id}: face vector dim ${faceVec.length} != ${dims.d_face}`,
        );
      }
    }
    objects.push({ object_vec: detected[i].vec, face_vec: faceVec });
  }
  return { objects, anps: await backends.extractAnps(record.image_path) };
}

export interface ExportOptions {
  manifestPath: string;
  mode: "mock" | "real";
  outDir: string;
  backends?: ExtractorBackends;
}

export async function runExport(opts: ExportOptions): Promise<ExportReport> {
  const manifest = loadManifest(opts.manifestPath);
  if (opts.mode === "real" && !opts.backends) {
    throw new ExportError(
      "real mode needs extractor backends (none are bundled; wire your own " +
      "object detector, face-attribute model and prompt encoder)",
    );
  }
  const dumpPath = path.resolve(path.dirname(opts.manifestPath), manifest.entity_dump);
  const entities = loadEntityDump(dumpPath);
  fs.mkdirSync(opts.outDir, { recursive: true });

  const entityLines = entities.map((e) => {
    let vec = e.description_vec ?? null;
    if (vec && vec.length !== manifest.dims.d) {
      throw new ExportError(
        `entity ${e.entity_id}: description vector dim ${vec.length} != ${manifest.dims.d}`,
      );
    }
    if (!vec && !e.description_text) {
      vec = unit(
        streamFor(manifest.seed, "entity", e.entity_id).normalVector(manifest.dims.d),
      );
    }
    return JSON.stringify({
      entity_id: e.entity_id,
      name: e.name,
      type: e.type ?? null,
      description_text: e.description_text ?? null,
      description_vec: vec,
    });
  });
  fs.writeFileSync(path.join(opts.outDir, "entities.jsonl"),
                   entityLines.join("\n") + "\n");

  const sampleLines: string[] = [];
  const reports: RecordReport[] = [];
  for (const record of manifest.records) {
    const recordReport: RecordReport = {
      sample_id: record.sample_id,
      warnings: [],
      face_prompts: [],
    };
    const features = opts.mode === "mock"
      ? mockRecord(record, manifest.dims, manifest.seed, recordReport)
      : await realRecord(record, manifest.dims, opts.backends!, recordReport);
    sampleLines.push(JSON.stringify({
      sample_id: record.sample_id,
      text: record.text,
      mention: { surface: record.mention },
      gold_entity_id: record.gold_entity_id,
      objects: features.objects,
      anps: features.anps,
    }));
    reports.push(recordReport);
  }
  fs.writeFileSync(path.join(opts.outDir, "samples.jsonl"),
                   sampleLines.join("\n") + "\n");

  const report: ExportReport = {
    mode: opts.mode,
    seed: manifest.seed,
    n_records: manifest.records.length,
    n_entities: entities.length,
    records: reports,
  };
  fs.writeFileSync(path.join(opts.outDir, "export_report.json"),
                   JSON.stringify(report, null, 2) + "\n");
  return report;
}
