/**
 * Wire protocol: newline-delimited JSON over stdin/stdout.
 *
 * Requests:  hello, set_image (base64 row-major little-endian float32),
 *            predict. Responses: hello_ack, image_ack, probs, error.
 * A version mismatch at hello is fatal (error reply, then exit code 2).
 */
import { z } from "zod";

export const PROTOCOL_VERSION = 1;

export const helloSchema = z.object({
  op: z.literal("hello"),
  version: z.number().int(),
});

export const setImageSchema = z.object({
  op: z.literal("set_image"),
  id: z.string().min(1),
  width: z.number().int().positive(),
  height: z.number().int().positive(),
  encoding: z.literal("f32le"),
  data: z.string(),
});

export const promptSchema = z.object({
  x: z.number().int(),
  y: z.number().int(),
  polarity: z.enum(["pos", "neg"]),
});

export const predictSchema = z.object({
  op: z.literal("predict"),
  image_id: z.string().min(1),
  prompts: z.array(promptSchema),
  stochastic: z.boolean().default(false),
  member_seed: z.number().int().default(0),
});

export const requestSchema = z.discriminatedUnion("op", [
  helloSchema,
  setImageSchema,
  predictSchema,
]);

export type HelloRequest = z.infer<typeof helloSchema>;
export type SetImageRequest = z.infer<typeof setImageSchema>;
export type PredictRequest = z.infer<typeof predictSchema>;
export type Request = z.infer<typeof requestSchema>;
export type PromptPoint = z.infer<typeof promptSchema>;

export interface HelloAck {
  op: "hello_ack";
  version: number;
  name: string;
}

export interface ImageAck {
  op: "image_ack";
  id: string;
}

export interface ProbsReply {
  op: "probs";
  image_id: string;
  encoding: "f32le";
  data: string;
}

export interface ErrorReply {
  op: "error";
  message: string;
}

export type Reply = HelloAck | ImageAck | ProbsReply | ErrorReply;

export function decodeF32(data: string, expected: number): Float32Array {
  const buf = Buffer.from(data, "base64");
  if (buf.length !== expected * 4) {
    throw new Error(`payload holds ${buf.length} bytes, expected ${expected * 4}`);
  }
  // avoid alignment surprises by copying into a fresh buffer
  const out = new Float32Array(expected);
  for (let i = 0; i < expected; i++) {
    out[i] = buf.readFloatLE(i * 4);
  }
  return out;
}

export function encodeF32(values: Float32Array): string {
  const buf = Buffer.alloc(values.length * 4);
  for (let i = 0; i < values.length; i++) {
    buf.writeFloatLE(values[i], i * 4);
  }
  return buf.toString("base64");
}
