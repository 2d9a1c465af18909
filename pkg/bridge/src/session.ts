/**
 * One bridge session: strictly serial request handling in arrival order.
 * Every input line produces exactly one reply line; malformed input yields
 * an error reply and the session continues. A hello with the wrong
 * protocol version is fatal.
 */
import { PromptModel, RegisteredImage } from "./model";
import {
  PROTOCOL_VERSION,
  Reply,
  decodeF32,
  encodeF32,
  requestSchema,
} from "./protocol";

export interface Handled {
  reply: Reply;
  fatal: boolean; // caller should exit(2) after writing the reply
}

export class BridgeSession {
  private images = new Map<string, RegisteredImage>();

  constructor(private model: PromptModel) {}

  handleLine(line: string): Handled {
    let parsed: unknown;
    try {
      parsed = JSON.parse(line);
    } catch (err) {
      return this.error(`bad json: ${(err as Error).message}`);
    }
    const request = requestSchema.safeParse(parsed);
    if (!request.success) {
      // a structurally valid hello with the wrong version is fatal, every
      // other malformed request keeps the session alive
      const op = (parsed as { op?: unknown })?.op;
      if (op === "hello") {
        const version = (parsed as { version?: unknown })?.version;
        return this.error(`unsupported protocol version ${String(version)}`, true);
      }
      return this.error(`invalid request: ${request.error.issues[0]?.message ?? "schema"}`);
    }

    const msg = request.data;
    switch (msg.op) {
      case "hello": {
        if (msg.version !== PROTOCOL_VERSION) {
          return this.error(`unsupported protocol version ${msg.version}`, true);
        }
        return this.ok({ op: "hello_ack", version: PROTOCOL_VERSION, name: this.model.name });
      }
      case "set_image": {
        let pixels: Float32Array;
        try {
          pixels = decodeF32(msg.data, msg.width * msg.height);
        } catch (err) {
          return this.error(`image ${msg.id}: ${(err as Error).message}`);
        }
        this.images.set(msg.id, { width: msg.width, height: msg.height, pixels });
        return this.ok({ op: "image_ack", id: msg.id });
      }
      case "predict": {
        const image = this.images.get(msg.image_id);
        if (!image) {
          return this.error(`unknown image_id ${msg.image_id}`);
        }
        for (const p of msg.prompts) {
          if (p.x < 0 || p.x >= image.width || p.y < 0 || p.y >= image.height) {
            return this.error(`prompt (${p.x}, ${p.y}) outside ${image.width}x${image.height}`);
          }
        }
        let probs: Float32Array;
        try {
          probs = this.model.predict(image, msg.prompts, msg.stochastic, msg.member_seed);
        } catch (err) {
          return this.error(`model failure: ${(err as Error).message}`);
        }
        if (probs.length !== image.width * image.height) {
          return this.error("model returned a grid of the wrong size");
        }
        for (let i = 0; i < probs.length; i++) {
          if (!(probs[i] >= 0 && probs[i] <= 1)) {
            return this.error("model returned probabilities outside [0, 1]");
          }
        }
        return this.ok({
          op: "probs",
          image_id: msg.image_id,
          encoding: "f32le",
          data: encodeF32(probs),
        });
      }
    }
  }

  private ok(reply: Reply): Handled {
    return { reply, fatal: false };
  }

  private error(message: string, fatal = false): Handled {
    return { reply: { op: "error", message }, fatal };
  }
}
