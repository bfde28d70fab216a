/** Shared types for the corpus exporter. */

export interface RawRecord {
  sample_id: string;
  text: string;
  mention: string;
  image_path?: string | null;
  gold_entity_id: string;
}

export interface ExportManifest {
  records: RawRecord[];
  /** path to the entity dump (JSONL), relative to the manifest file */
  entity_dump: string;
  dims: { d: number; d_obj: number; d_face: number };
  seed: number;
}

export interface EntityDumpRecord {
  entity_id: string;
  name: string;
  type?: string | null;
  description_text?: string | null;
  description_vec?: number[] | null;
}

/** One detected object region with its feature vector. */
export interface DetectedObject {
  vec: number[];
  bbox: [number, number, number, number]; // x, y, w, h
}

/** One detected face: attribute map plus its region. */
export interface DetectedFace {
  attrs: Record<string, string>;
  bbox: [number, number, number, number];
}

/**
 * Pluggable extractor backends for real mode.  Nothing is pinned here:
 * any object detector / vision encoder / face-attribute model combination
 * that fits these signatures works.
 */
export interface ExtractorBackends {
  detectObjects(imagePath: string): Promise<DetectedObject[]>;
  detectFaces(imagePath: string): Promise<DetectedFace[]>;
  /** encode a face-attribute prompt sentence into a d_face vector */
  encodePrompt(prompt: string): Promise<number[]>;
  /** scene-level adjective-noun pair strings for the image */
  extractAnps(imagePath: string): Promise<string[]>;
}

export interface RecordReport {
  sample_id: string;
  warnings: string[];
  face_prompts: string[];
}

export interface ExportReport {
  mode: "mock" | "real";
  seed: number;
  n_records: number;
  n_entities: number;
  records: RecordReport[];
}
