/**
 * Serve the probe harness and the bundled fixture corpus for manual
 * runs: point a real browser at the harness URL to capture a profile,
 * or crawl the printed site URLs through the intercepting proxy.
 */

import { parseArgs } from 'node:util';
import { readFileSync } from 'node:fs';

import { validateProfileDocument, type ProfileValue } from './profile.js';
import { defaultFixtureSpecs, SAMPLE_PROFILE } from './fixtures.js';
import { serveFixtures } from './server.js';

async function main(): Promise<void> {
    const { values } = parseArgs({
        options: {
            port: { type: 'string', default: '0' },
            'tracker-port': { type: 'string', default: '0' },
            profile: { type: 'string' },
            'tracker-host': { type: 'string', default: 'localhost' },
        },
    });

    let profile: Record<string, ProfileValue> = SAMPLE_PROFILE;
    if (values.profile) {
        const parsed = validateProfileDocument(JSON.parse(readFileSync(values.profile, 'utf-8')));
        profile = parsed.values;
    }

    const cluster = await serveFixtures(defaultFixtureSpecs(), {
        profile,
        ports: [Number(values.port), Number(values['tracker-port'])],
        trackerHost: values['tracker-host'],
    });

    console.log(`harness  ${cluster.harnessUrl}  (probe page at /, POST /probe, GET /whoami)`);
    console.log(`tracker  ${cluster.trackerUrl}`);
    for (const site of cluster.sites) {
        console.log(`site     ${site.name.padEnd(16)} ${site.url}`);
    }
    console.log('ctrl-c stops the cluster');

    await new Promise<void>((resolve) => {
        process.on('SIGINT', () => resolve());
        process.on('SIGTERM', () => resolve());
    });
    await cluster.close();
    const submitted = cluster.probeSubmissions.length;
    if (submitted > 0) {
        console.log(`received ${submitted} probe submission(s); last one:`);
        console.log(JSON.stringify(cluster.probeSubmissions[submitted - 1], null, 2));
    }
}

main().catch((err) => {
    console.error(String(err instanceof Error ? err.message : err));
    process.exit(1);
});
