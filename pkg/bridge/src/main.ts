#!/usr/bin/env node
/** Entry point: serve one bridge session over stdin/stdout until EOF. */
import * as readline from "node:readline";
import { createModel } from "./model";
import { BridgeSession } from "./session";

function parseArgs(argv: string[]): { model: string } {
  let model = "echo";
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === "--model" && argv[i + 1]) {
      model = argv[i + 1];
      i++;
    } else if (argv[i] === "--help") {
      process.stderr.write("usage: main.js [--model echo]\n");
      process.exit(0);
    }
  }
  return { model };
}

export function serve(): void {
  const { model } = parseArgs(process.argv.slice(2));
  const session = new BridgeSession(createModel(model));
  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  let dying = false;
  rl.on("line", (line) => {
    const { reply, fatal } = session.handleLine(line);
    const payload = JSON.stringify(reply) + "\n";
    if (fatal) {
      dying = true;
      rl.close();
      // flush the error reply before terminating
      process.stdout.write(payload, () => process.exit(2));
    } else {
      process.stdout.write(payload);
    }
  });
  rl.on("close", () => {
    if (!dying) {
      process.exit(0);
    }
  });
}

if (require.main === module) {
  serve();
}
